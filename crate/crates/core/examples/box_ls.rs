//! Box-constrained least squares, alone and as a segment fit.
//!
//! `cargo run --example box_ls`

use fbdisagg::filterbank::{kkt_violation, solve_box_qp};
use fbdisagg::*;
use nalgebra::{DMatrix, DVector};

fn main() -> Result<()> {
    // minimise |A x - b|^2 with 0 <= x <= 1
    let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 2.0]);
    let b = DVector::from_row_slice(&[2.0, 1.0, -1.0, 0.5]);
    let g = a.transpose() * &a;
    let c = a.transpose() * &b;
    let (lo, hi) = ([0.0, 0.0], [1.0, 1.0]);
    let x = solve_box_qp(&g, &c, &lo, &hi);
    println!("x = {:?}, KKT violation {:.1e}", x.as_slice(), kkt_violation(&g, &c, &x, &lo, &hi));

    // a segment where device "kettle" switches on three samples ago
    let library = DeviceLibrary::new(vec![
        FirModel::new("kettle", vec![1500.0, 300.0]).with_bounds(-1.0, 1.0),
        FirModel::new("fridge", vec![60.0, 40.0, 20.0]).with_bounds(-1.0, 1.0),
    ])?;
    let y = [1570.0, 1870.0, 1870.0];
    let fit = estimate_segment(&y, 70.0, &library, None)?;
    println!("delta u = {:?}, sse {:.3}", fit.delta_u, fit.sse);
    let kettle_only = estimate_segment(&y, 70.0, &library, Some(0))?;
    println!("kettle only: delta u = {:?}, sse {:.3}", kettle_only.delta_u, kettle_only.sse);
    Ok(())
}
