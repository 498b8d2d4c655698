//! End-to-end checks of the replication driver with real estimators.

use dpmreg::sim::{fit_seed, model_fits, replication_data, run_replications, Estimator, FitSettings, Model, OutcomeFamily, ScenarioSpec};
use dpmreg::McmcSettings;

fn small(family: OutcomeFamily) -> ScenarioSpec {
    ScenarioSpec {
        n_subjects: 30,
        li: 4,
        ..ScenarioSpec::mix_means(family)
    }
}

fn settings() -> FitSettings {
    FitSettings {
        mcmc: McmcSettings::new(400, 200, 1, 0, 1).unwrap(),
        ..FitSettings::default()
    }
}

#[test]
fn every_survival_model_runs() {
    let fam = OutcomeFamily::Survival {
        shape: 1.0,
        censor_quantile: Some(0.9),
    };
    let fits = model_fits(&Model::SURVIVAL, &settings());
    let refs: Vec<&dyn Estimator> = fits.iter().map(|m| m as &dyn Estimator).collect();
    let run = run_replications(&small(fam), &refs, 3, 5, None).unwrap();
    assert_eq!(run.summary.rows.len(), 6);
    assert_eq!(run.records.len(), 18);
    for r in &run.summary.rows {
        assert_eq!(r.successes + r.failures, 3);
        assert!(r.mean.is_finite(), "{r:?}");
    }
}

#[test]
fn single_fit_replays_a_replication() {
    let spec = small(OutcomeFamily::Binary);
    let fits = model_fits(&[Model::MeanDpm, Model::Glmm], &settings());
    let refs: Vec<&dyn Estimator> = fits.iter().map(|m| m as &dyn Estimator).collect();
    let run = run_replications(&spec, &refs, 2, 9, Some(1)).unwrap();
    let data = replication_data(&spec, 9, 1).unwrap();
    for f in &fits {
        let replay = f.fit(&data, fit_seed(9, 1, f.stream_key())).unwrap();
        let rec = run.records.iter().find(|r| r.replication == 1 && r.model == f.model.id()).unwrap();
        assert_eq!(rec.outcome.as_ref().unwrap(), &replay);
    }
}

#[test]
fn zero_replications_is_a_config_error() {
    let fits = model_fits(&[Model::Glm], &settings());
    let refs: Vec<&dyn Estimator> = fits.iter().map(|m| m as &dyn Estimator).collect();
    assert!(run_replications(&small(OutcomeFamily::Binary), &refs, 0, 1, None).is_err());
}
