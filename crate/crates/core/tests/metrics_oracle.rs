//! Reference values computed with scikit-learn 1.x on the fixture below.

use amprob_core::clustering::metrics::*;
use amprob_core::clustering::MetricReport;

const X: [f64; 40] = [
    3.528, 0.8, 1.957, 4.482, 3.735, -1.955, 1.9, -0.303, -0.206, 0.821, 0.288, 2.909, 1.522, 0.243, 0.888, 0.667,
    2.988, -0.41, 0.626, -1.708, -5.106, 1.307, 1.729, -1.484, 4.54, -2.909, 0.092, -0.374, 3.066, 2.939, 0.31, 0.756,
    -1.776, -3.962, -0.696, 0.313, 2.461, 2.405, -0.775, -0.605,
];
const T: [usize; 20] = [0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 0, 1, 2, 0, 1, 2, 3, 3];
const P: [usize; 20] = [1, 1, 0, 0, 0, 0, 1, 2, 2, 2, 1, 2, 1, 0, 2, 1, 0, 2, 2, 2];

fn close(got: Option<f64>, want: f64) {
    let g = got.expect("defined");
    assert!((g - want).abs() <= 1e-8 * (1.0 + want.abs()), "got {g}, want {want}");
}

#[test]
fn supervised_scores_match_reference() {
    close(adjusted_rand(&T, &P).unwrap(), 0.4626845082080287);
    close(rand_score(&T, &P).unwrap(), 0.7842105263157895);
    close(adjusted_mutual_info(&T, &P).unwrap(), 0.49051716894148445);
    close(normalized_mutual_info(&T, &P).unwrap(), 0.572252978238842);
    close(adjusted_rand(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.0);
}

#[test]
fn internal_scores_match_reference() {
    close(calinski_harabasz(&X, 2, &P).unwrap(), 0.3109722636608642);
    close(davies_bouldin(&X, 2, &P).unwrap(), 7.931609594003143);
    close(silhouette(&X, 2, &P).unwrap(), -0.1342987096470115);
}

#[test]
fn report_carries_all_seven_metrics() {
    let r = MetricReport::compute(&X, 2, &P, Some(&T)).unwrap();
    for m in [
        r.adjusted_rand,
        r.rand,
        r.adjusted_mutual_info,
        r.normalized_mutual_info,
        r.calinski_harabasz,
        r.davies_bouldin,
        r.silhouette,
    ] {
        assert!(m.is_some());
    }
}

#[test]
fn identical_partitions_score_one_under_relabeling() {
    let relabeled: Vec<usize> = T.iter().map(|&t| 3 - t).collect();
    close(adjusted_rand(&T, &relabeled).unwrap(), 1.0);
    close(adjusted_mutual_info(&T, &relabeled).unwrap(), 1.0);
    close(normalized_mutual_info(&T, &relabeled).unwrap(), 1.0);
}
