use dexgraph_bench::{blobs, rss, softmax};
use dexgraph_core::fl::accuracy;

#[test]
fn fixtures_are_deterministic() {
    assert_eq!(rss(8, 3), rss(8, 3));
    assert_eq!(blobs(4, 3, 20, 1).len(), 80);
    assert_eq!(softmax(3, 4, 5), softmax(3, 4, 5));
}

#[test]
fn untrained_softmax_is_near_chance() {
    let data = blobs(4, 3, 200, 2);
    let acc = accuracy(&softmax(3, 4, 0), &data).unwrap();
    assert!(acc < 0.6, "{acc}");
}
