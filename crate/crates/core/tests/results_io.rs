use std::fs;

use proptest::prelude::*;

use causal_bandits::harness::{read_results, write_results, CurveMeta, CurvePoint, RegretCurve, COLUMNS};
use causal_bandits::Error;

fn meta() -> CurveMeta {
    CurveMeta {
        algo: "robust_lcb".into(),
        graph: "chain".into(),
        n_nodes: 4,
        d: 1,
        l: 3,
        measure: "ad".into(),
        c: 142.0,
        n_seeds: 20,
    }
}

fn curve(values: &[(f64, f64, f64)]) -> RegretCurve {
    RegretCurve {
        meta: meta(),
        points: values
            .iter()
            .enumerate()
            .map(|(k, &(mean_regret, std_regret, mean_reward))| CurvePoint {
                t: k + 1,
                mean_regret,
                std_regret,
                mean_reward,
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn write_then_read_is_lossless(
        values in prop::collection::vec((-1e6f64..1e6, 0.0f64..1e4, -50.0f64..50.0), 1..40),
        c in 0.0f64..1e4,
        k in 1usize..7,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        let mut original = curve(&values);
        original.meta.c = c;
        let original = original.downsample(k);
        write_results(&original, &path).unwrap();
        prop_assert_eq!(read_results(&path).unwrap(), original);
    }
}

#[test]
fn header_is_the_fixed_column_list() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    write_results(&curve(&[(0.5, 0.1, 2.0), (1.0, 0.2, 2.1)]), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, COLUMNS.join(","));
    assert_eq!(
        header,
        "t,algo,graph,n_nodes,d,L,measure,C,mean_regret,std_regret,mean_reward,n_seeds"
    );
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    fs::write(
        &path,
        "t,algo,graph,n_nodes,d,L,measure,C,mean_regret,mean_reward,n_seeds\n\
         1,robust_lcb,chain,4,1,3,ad,1,0.5,2.0,3\n",
    )
    .unwrap();
    match read_results(&path).unwrap_err() {
        Error::Parse { line, message, .. } => {
            assert_eq!(line, 1);
            assert!(message.contains("std_regret"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn bad_value_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    write_results(&curve(&[(0.5, 0.1, 2.0), (1.0, 0.2, 2.1), (1.5, 0.3, 2.2)]), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap().replacen("2,robust_lcb", "2x,robust_lcb", 1);
    fs::write(&path, text).unwrap();
    match read_results(&path).unwrap_err() {
        Error::Parse { line, message, .. } => {
            assert_eq!(line, 3);
            assert!(message.contains("`t`"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn columns_may_be_reordered() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    fs::write(
        &path,
        "n_seeds,t,algo,graph,n_nodes,d,L,measure,C,mean_regret,std_regret,mean_reward\n\
         3,1,robust_lcb,chain,4,1,3,ad,142,0.5,0.1,2.0\n",
    )
    .unwrap();
    let c = read_results(&path).unwrap();
    assert_eq!(c.meta.n_seeds, 3);
    assert_eq!(c.points[0].mean_regret, 0.5);
}

#[test]
fn downsampling_keeps_first_stride_and_last() {
    let values: Vec<(f64, f64, f64)> = (0..10).map(|k| (k as f64, 0.0, 1.0)).collect();
    let ts: Vec<usize> = curve(&values).downsample(4).points.iter().map(|p| p.t).collect();
    assert_eq!(ts, vec![1, 5, 9, 10]);
    let ts: Vec<usize> = curve(&values).downsample(3).points.iter().map(|p| p.t).collect();
    assert_eq!(ts, vec![1, 4, 7, 10]);
    assert_eq!(curve(&values).downsample(1), curve(&values));
}

#[test]
fn missing_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_results(&dir.path().join("absent.csv")).is_err());
}
