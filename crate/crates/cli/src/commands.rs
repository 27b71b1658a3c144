use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use disalign::calibration::export_weight_curve;
use disalign::eval::{rho_sweep, BoundRow, SweepRow};
use disalign::io::ltds::{read_dataset, write_csv, write_dataset};
use disalign::pipeline::{
    calibrated_model, evaluate_model, load_datasets, run_baseline, run_bound_study,
    run_calibration, run_stage1, BaselineMethod, Datasets,
};
use disalign::{
    class_frequencies, evaluate, Adjustment, Checkpoint, EncoderParams, EvalReport,
    ExperimentConfig, Group, HeadParams, Model,
};

use crate::{Cli, Command};

struct RunContext {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl RunContext {
    fn new(cli: &Cli) -> Result<Self> {
        let g = &cli.global;
        let mut cfg = ExperimentConfig::load_with_overrides(g.config.as_deref(), &g.overrides)?;
        if let Some(seed) = g.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &g.out {
            cfg.out = out.clone();
        }
        let out = cfg.out.clone();
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("config.toml"), cfg.to_toml_string()?)
            .with_context(|| format!("writing {}", out.join("config.toml").display()))?;
        Ok(Self { cfg, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    fn write_report(&self, stem: &str, report: &EvalReport) -> Result<()> {
        let p = self.write(&format!("{stem}.json"), &report.to_json()?)?;
        self.write(&format!("{stem}.csv"), &report.to_csv())?;
        println!("{}  -> {}", summary(report), p.display());
        Ok(())
    }

    /// Stage-1 encoder and head, from a checkpoint or freshly trained.
    fn stage1(&self, data: &Datasets, checkpoint: Option<&Path>) -> Result<(EncoderParams, HeadParams)> {
        match checkpoint {
            Some(p) => {
                let ck = Checkpoint::load(p).with_context(|| format!("loading {}", p.display()))?;
                Ok((ck.encoder()?, ck.head()?))
            }
            None => {
                let s1 = run_stage1(&self.cfg, &data.train)?;
                Ok((s1.encoder, s1.head))
            }
        }
    }
}

fn summary(r: &EvalReport) -> String {
    let g = |group| r.group(group).map_or("-".to_string(), |v| format!("{v:.4}"));
    format!(
        "{}: balanced_accuracy {:.4}  many {}  medium {}  few {}",
        r.predictor,
        r.balanced_accuracy,
        g(Group::Many),
        g(Group::Medium),
        g(Group::Few)
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = RunContext::new(cli)?;
    let cfg = &ctx.cfg;
    match &cli.command {
        Command::Gen { csv } => {
            let data = load_datasets(cfg)?;
            for (name, ds) in [("train", &data.train), ("test", &data.test)] {
                let p = ctx.path(&format!("{name}.ltds"));
                write_dataset(&p, ds).with_context(|| format!("writing {}", p.display()))?;
                if *csv {
                    write_csv(ctx.path(&format!("{name}.csv")), ds)?;
                }
                println!("{name}: {} samples, {} classes, dim {}  -> {}", ds.len(), ds.num_classes(), ds.dim(), p.display());
            }
        }
        Command::Train => {
            let data = load_datasets(cfg)?;
            let s1 = run_stage1(cfg, &data.train)?;
            Checkpoint::new(&s1.encoder, &s1.head)
                .with_train_counts(data.train.class_counts())
                .save(ctx.path("stage1.json"))?;
            ctx.write("stage1_trace.csv", &s1.trace.to_csv())?;
            ctx.write_report("stage1_report", &evaluate_model(cfg, &data, &s1.model())?)?;
        }
        Command::Calibrate { checkpoint } => {
            let data = load_datasets(cfg)?;
            let (enc, head) = ctx.stage1(&data, checkpoint.as_deref())?;
            let cal = run_calibration(cfg, &data.train, &enc, &head)?;
            Checkpoint::new(&enc, &head)
                .with_calibration(&cal.params, cal.rho)
                .with_train_counts(data.train.class_counts())
                .save(ctx.path("disalign.json"))?;
            ctx.write("stage2_trace.csv", &cal.trace.to_csv())?;
            let model = calibrated_model(&enc, &head, &cal);
            ctx.write_report("disalign_report", &evaluate_model(cfg, &data, &model)?)?;
        }
        Command::Baseline { method, checkpoint } => {
            let method: BaselineMethod = method.parse()?;
            let data = load_datasets(cfg)?;
            let (enc, head) = ctx.stage1(&data, checkpoint.as_deref())?;
            let model = run_baseline(method, cfg, &data.train, &enc, &head)?;
            let report = evaluate_model(cfg, &data, &model)?;
            ctx.write_report(&format!("baseline_{}_report", method.as_str().replace('-', "_")), &report)?;
        }
        Command::Eval { checkpoint, data } => {
            let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let mut model = Model::new("checkpoint", ck.encoder()?, ck.head()?);
            if let Some(c) = &ck.calibration {
                model = model.with_adjustment(Adjustment::Calibration(c.to_params()?));
                model.name = format!("disalign rho={}", c.rho);
            }
            let (test, counts) = match (data, &ck.train_counts) {
                (Some(p), Some(counts)) => (read_dataset(p).with_context(|| format!("loading {}", p.display()))?, counts.clone()),
                _ => {
                    let sets = load_datasets(cfg)?;
                    let counts = ck.train_counts.clone().unwrap_or_else(|| sets.train.class_counts().to_vec());
                    let test = match data {
                        Some(p) => read_dataset(p).with_context(|| format!("loading {}", p.display()))?,
                        None => sets.test,
                    };
                    (test, counts)
                }
            };
            ctx.write_report("eval_report", &evaluate(&test, &model, &counts, &cfg.groups)?)?;
        }
        Command::SweepRho { checkpoint } => {
            let data = load_datasets(cfg)?;
            let (enc, head) = ctx.stage1(&data, checkpoint.as_deref())?;
            let rows = rho_sweep(&data.train, &enc, &head, &cfg.sweep.rhos, cfg.align.flags(), &cfg.stage2_sgd(), &data.test, &cfg.groups)?;
            let p = ctx.write("sweep_rho.csv", &SweepRow::to_csv(&rows))?;
            for r in &rows {
                println!("rho {:<5} {}", r.rho, summary(&r.report));
            }
            println!("-> {}", p.display());
        }
        Command::BoundStudy => {
            if cfg.data.train_path.is_some() {
                bail!("bound-study needs generated data; unset data.train_path");
            }
            let rows = run_bound_study(cfg)?;
            let p = ctx.write("bound_study.csv", &BoundRow::to_csv(&rows))?;
            for r in &rows {
                println!(
                    "{:<18} stage-1 {:.4}  bound {:.4}",
                    r.sampler.as_str(),
                    r.baseline.balanced_accuracy,
                    r.bound.balanced_accuracy
                );
            }
            println!("-> {}", p.display());
        }
        Command::WeightCurve => {
            let data = load_datasets(cfg)?;
            let curve = export_weight_curve(&class_frequencies(&data.train)?, &cfg.sweep.rhos)?;
            let p = ctx.write("weight_curve.csv", &curve.to_csv())?;
            println!("{} classes x {} rho values -> {}", curve.classes.len(), curve.columns.len(), p.display());
        }
    }
    Ok(())
}
