use std::path::PathBuf;

use amprob_lab::commands::{attn, capacity, cluster, icl, landscape};
use amprob_lab::runner::parse_config;

fn read(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn bundled_configs_parse() {
    for name in ["landscape_crp_alpha.toml", "landscape_kde.toml"] {
        parse_config::<landscape::LandscapeConfig>(&read(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let c: cluster::ClusterConfig = parse_config(&read("cluster_iris.toml")).unwrap();
    assert_eq!(c.datasets.len(), 3);
    assert_eq!(c.train.optimizer.lr, 0.05);
    let c: capacity::CapacityConfig = parse_config(&read("capacity.toml")).unwrap();
    assert_eq!(c.cells.len(), 6);
    let c: icl::IclTrainCmdConfig = parse_config(&read("icl_train.toml")).unwrap();
    assert_eq!(c.train.cd.positions_per_sequence, Some(8));
    parse_config::<icl::IclEvalCmdConfig>(&read("icl_eval.toml")).unwrap();
    parse_config::<attn::AttnCheckConfig>(&read("attn_check.toml")).unwrap();
}

#[test]
fn nested_unknown_keys_are_rejected() {
    let err = parse_config::<cluster::ClusterConfig>("[train]\nbeta = 1.0\nepochz = 3\n").unwrap_err();
    assert!(err.contains("epochz") && err.contains("line 3"), "{err}");
    let err = parse_config::<landscape::LandscapeConfig>("[model]\nkind = \"mchn\"\npatterns = [[0.0, 1.0]]\nbeta = 1.0\nbta = 2.0\n")
        .unwrap_err();
    assert!(err.contains("bta"), "{err}");
}
