use std::collections::HashSet;

use owa_pto::tasks::grid::{gen_grid_task, GridTaskConfig};
use owa_pto::tasks::portfolio::{
    gen_portfolio, portfolio_predictor, portfolio_regret_table, PortfolioData, PortfolioExperiment,
    PortfolioTaskConfig,
};
use owa_pto::tasks::rank::{gen_rank_task, RankTaskConfig};
use owa_pto::tasks::TaskDataset;

fn small_datasets(seed: u64) -> Vec<TaskDataset> {
    vec![
        gen_portfolio(&PortfolioTaskConfig {
            samples: 40,
            seed,
            ..Default::default()
        })
        .unwrap(),
        gen_grid_task(&GridTaskConfig {
            samples: 40,
            seed,
            ..Default::default()
        })
        .unwrap(),
        gen_rank_task(&RankTaskConfig {
            queries: 40,
            seed,
            ..Default::default()
        })
        .unwrap(),
    ]
}

#[test]
fn generation_is_deterministic_per_seed() {
    for (a, b) in small_datasets(3).iter().zip(small_datasets(3)) {
        assert_eq!(*a, b);
    }
    for (a, b) in small_datasets(3).iter().zip(small_datasets(4)) {
        assert_ne!(a.samples, b.samples, "{:?}", a.task);
    }
}

#[test]
fn splits_are_disjoint() {
    for d in small_datasets(1) {
        let s = d.split(20, 8, 12, 7).unwrap();
        let all: HashSet<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), 40);
        assert!(d.split(30, 8, 12, 7).is_err());
    }
}

#[test]
fn dataset_text_roundtrip() {
    for d in small_datasets(2) {
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        let back = TaskDataset::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }
}

#[test]
fn untrained_portfolio_regret_is_nonnegative() {
    let exp = PortfolioExperiment {
        task: PortfolioTaskConfig {
            samples: 60,
            ..Default::default()
        },
        train: 20,
        val: 10,
        test: 30,
        ..Default::default()
    };
    let data = PortfolioData::prepare(&exp, 0).unwrap();
    let model = portfolio_predictor(exp.task.feature_dim, exp.task.m, exp.task.n, 0).unwrap();
    let table =
        portfolio_regret_table(&model, &data.test, &data.test_refs, &data.weights, exp.task.m, exp.task.n)
            .unwrap();
    assert_eq!(table.len(), 30);
    assert!(table.rows.iter().all(|r| r.regret >= -1e-6), "{table:?}");
}
