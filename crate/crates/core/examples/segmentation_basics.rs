//! Change-point bookkeeping: indicator sequences, change points, segments.
//!
//! `cargo run --example segmentation_basics`

use fbdisagg::{min_segment_ok, Segmentation};

fn main() {
    let seg = Segmentation::from_changepoints(12, &[4, 9]);
    println!("delta       {seg}");
    println!("changes at  {:?}", seg.to_changepoints());
    for s in seg.segments() {
        println!("segment     {s:?}");
    }
    println!("prefix(6)   {}", seg.prefix(6));
    println!("min length 3 ok: {}", min_segment_ok(&seg, 3));
    println!("min length 6 ok: {}", min_segment_ok(&seg, 6));

    let mut online = Segmentation::default();
    for bit in [false, false, true, false, false] {
        online.push(bit);
    }
    assert_eq!(online, Segmentation::from_delta(&[false, false, true, false, false]));
    println!("built online: {online} ({} change)", online.num_changes());
}
