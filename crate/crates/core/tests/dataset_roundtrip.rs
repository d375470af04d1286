use std::fs;

use proptest::prelude::*;
use specnet::dataset::{
    load_split, parse_tudataset, save_split, split_domains, synthetic_dataset, write_tudataset, Partition,
    SplitStatistic,
};

#[test]
fn written_datasets_parse_back_identically() {
    let ds = synthetic_dataset("RT", 60, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_tudataset(dir.path(), "RT", &ds.graphs).unwrap();
    let a = parse_tudataset(dir.path(), "RT").unwrap();
    let b = parse_tudataset(dir.path(), "RT").unwrap();
    assert_eq!(a.graphs, b.graphs);
    assert_eq!(a.content_hash(), ds.content_hash());
    let indicator = fs::read_to_string(dir.path().join("RT_graph_indicator.txt")).unwrap();
    let nodes: usize = a.graphs.iter().map(|g| g.node_count()).sum();
    assert_eq!(indicator.lines().filter(|l| !l.trim().is_empty()).count(), nodes);
}

#[test]
fn manifest_survives_a_disk_roundtrip() {
    let ds = synthetic_dataset("RT", 60, 11).unwrap();
    let split = split_domains(&ds, SplitStatistic::AvgDegree, 3, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.txt");
    save_split(&split, &path).unwrap();
    assert_eq!(load_split(&path, Some(&ds.content_hash())).unwrap(), split);
    assert!(load_split(&path, Some("0000")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn split_is_an_ordered_partition(count in 20usize..120, k in 2usize..6, seed in any::<u64>()) {
        let ds = synthetic_dataset("P", count, seed).unwrap();
        let stat = SplitStatistic::EdgeDensity;
        let split = split_domains(&ds, stat, k, seed).unwrap();
        let sizes = split.domain_sizes();
        prop_assert_eq!(sizes.iter().sum::<usize>(), count);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for d in 0..k {
            let mut seen: Vec<usize> = [Partition::Train, Partition::Test]
                .iter()
                .flat_map(|&p| split.members(d, p))
                .collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, split.domain_members(d));
        }
        for d in 1..k {
            let hi = split.domain_members(d - 1).iter().map(|&i| stat.of(&ds.graphs[i])).fold(f64::MIN, f64::max);
            let lo = split.domain_members(d).iter().map(|&i| stat.of(&ds.graphs[i])).fold(f64::MAX, f64::min);
            prop_assert!(hi <= lo);
        }
    }
}
