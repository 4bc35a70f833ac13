use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use affine_fold::bench::{bench_csv, bench_predict as run_bench, BenchOptions};
use affine_fold::data::{load_mnist, load_model, save_affine, save_network, subset, Dataset, Model, Split};
use affine_fold::layers::export_matrix as write_triplets;
use affine_fold::train::{
    excise_skips, gradcheck_with, sweep_csv, sweep_t as run_sweep, train_scheduled, SgdConfig, TSchedule,
};
use affine_fold::{collapse_network, predict_class, preset, Error, Network, Predictor, Preset, Vector};

use crate::{
    pin, svg, BenchArgs, BuildArgs, CheckFailed, CollapseArgs, DataArgs, ExportArgs, GradcheckArgs, PredictArgs,
    SgdArgs, SweepArgs, TrainArgs,
};

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn load_network(stem: &Path) -> Result<Network> {
    match load_model(stem).with_context(|| format!("loading {}", stem.display()))? {
        Model::Network(net) => Ok(net),
        Model::Affine(_) => Err(config_err(format!("{} is a collapsed map, not a network", stem.display()))),
    }
}

fn predictor(model: &Model) -> &dyn Predictor {
    match model {
        Model::Network(net) => net,
        Model::Affine(map) => map,
    }
}

/// Write to `path`, or to stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_subsets(d: &DataArgs) -> Result<(Dataset, Dataset)> {
    let train = load_mnist(&d.data_dir, Split::Train)?;
    let test = load_mnist(&d.data_dir, Split::Test)?;
    let train = subset(&train, d.subset, d.data_seed)?;
    let val = subset(&test, d.val_subset, d.data_seed.wrapping_add(1))?;
    Ok((train, val))
}

fn sgd_config(s: &SgdArgs, epochs: usize) -> SgdConfig {
    SgdConfig {
        learning_rate: s.lr,
        batch_size: s.batch_size,
        epochs,
        rng_seed: s.seed,
    }
}

fn parse_preset(name: &str, layers: Option<usize>) -> Result<Preset> {
    match (name.trim(), layers) {
        ("deep_linear", Some(l)) => Ok(format!("deep_linear({l})").parse()?),
        ("deep_linear", None) => Err(config_err("deep_linear needs --layers")),
        (_, None) => Ok(name.parse()?),
        (_, Some(l)) => match name.parse::<Preset>()? {
            Preset::DeepLinear(n) if n == l => Ok(Preset::DeepLinear(n)),
            _ => Err(config_err(format!("--layers {l} does not apply to preset '{name}'"))),
        },
    }
}

pub fn build(a: BuildArgs) -> Result<()> {
    let p = parse_preset(&a.preset, a.layers)?;
    let mut net = preset(p, a.seed)?;
    if let Some(t) = a.skip_t {
        net = net.set_uniform_skip(t)?;
    }
    let (manifest, blob) = save_network(&a.out, &net)?;
    println!(
        "{p}: {} layers, {} parameters, {} skips -> {}, {}",
        net.depth(),
        net.param_count(),
        net.skips.skip_edges().len(),
        manifest.display(),
        blob.display()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let schedule: TSchedule = a.schedule.parse()?;
    let config = sgd_config(&a.sgd, a.epochs);
    if schedule.len() != a.epochs {
        return Err(config_err(format!(
            "schedule has {} values but --epochs is {}",
            schedule.len(),
            a.epochs
        )));
    }
    config.validate()?;
    let net = load_network(&a.model)?;
    let (train, val) = load_subsets(&a.data)?;
    let (mut trained, history) = train_scheduled(&net, &train, &val, &config, &schedule)?;
    for r in &history.records {
        eprintln!(
            "epoch {:>2}  t {:.3}  loss {:.4}  val {:.2}%  {} ms",
            r.epoch,
            r.t,
            r.train_loss,
            100.0 * r.val_accuracy,
            r.wall_ms
        );
    }
    if a.excise {
        trained = excise_skips(&trained)?;
    }
    save_network(&a.out, &trained)?;
    let history_path = a.history.unwrap_or_else(|| with_suffix(&a.out, ".history.csv"));
    fs::write(&history_path, history.to_csv()).with_context(|| format!("writing {}", history_path.display()))?;
    println!(
        "final validation accuracy {:.4}; history in {}",
        history.final_accuracy().unwrap_or(0.0),
        history_path.display()
    );
    Ok(())
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn collapse(a: CollapseArgs) -> Result<()> {
    let net = load_network(&a.model)?;
    let r = collapse_network(&net)?;
    save_affine(&a.out, &r.map)?;
    println!(
        "collapsed {} layers into a {}x{} affine map: {} -> {} flops per prediction ({:.4}x)",
        r.source_layer_count,
        r.map.output_len(),
        r.map.input_len(),
        r.flop_count_layered,
        r.flop_count_collapsed,
        r.flop_count_collapsed as f64 / r.flop_count_layered as f64
    );
    Ok(())
}

pub fn excise(a: CollapseArgs) -> Result<()> {
    let net = load_network(&a.model)?;
    let out = excise_skips(&net)?;
    save_network(&a.out, &out)?;
    println!("removed {} skips", net.skips.skip_edges().len());
    Ok(())
}

fn random_inputs(n: usize, d: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
}

pub fn predict(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let m = predictor(&model);
    let (inputs, labels) = match a.random {
        Some(n) => (random_inputs(n, m.input_len(), a.seed), None),
        None => {
            let mut test = load_mnist(&a.data_dir, Split::Test)?;
            if let Some(n) = a.limit {
                test.images.truncate(n);
                test.labels.truncate(n);
            }
            (test.images, Some(test.labels))
        }
    };
    let mut csv = String::from(if labels.is_some() { "index,class,label\n" } else { "index,class\n" });
    let mut hits = 0;
    for (n, x) in inputs.iter().enumerate() {
        let class = predict_class(&m.logits(x)?);
        match &labels {
            Some(l) => {
                hits += usize::from(class == l[n]);
                csv.push_str(&format!("{n},{class},{}\n", l[n]));
            }
            None => csv.push_str(&format!("{n},{class}\n")),
        }
    }
    emit(a.out.as_deref(), &csv)?;
    if labels.is_some() && !inputs.is_empty() {
        eprintln!("accuracy {:.4} on {} images", hits as f64 / inputs.len() as f64, inputs.len());
    }
    Ok(())
}

pub fn bench_predict(a: BenchArgs) -> Result<()> {
    let models = a
        .models
        .iter()
        .map(|p| load_model(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    if !a.no_pin {
        match pin::pin_to_current_core() {
            Some(cpu) => eprintln!("pinned to cpu {cpu}"),
            None => eprintln!("could not pin to a core; timing unpinned"),
        }
    }
    let names: Vec<String> = a
        .models
        .iter()
        .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |f| f.to_string_lossy().into_owned()))
        .collect();
    let entries: Vec<(&str, &dyn Predictor)> = names.iter().map(String::as_str).zip(models.iter().map(predictor)).collect();
    let opts = BenchOptions {
        reps: a.reps,
        warmup: a.warmup,
        seed: a.seed,
        batch: a.batch,
    };
    let reports = run_bench(&entries, &opts)?;
    emit(a.out.as_deref(), &bench_csv(&reports))
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| config_err(format!("bad grid value '{v}'")))
        })
        .collect()
}

pub fn sweep_t(a: SweepArgs) -> Result<()> {
    let grid = parse_grid(&a.grid)?;
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Range(format!("grid value t = {t} outside [0, 1]")).into());
    }
    let config = sgd_config(&a.sgd, a.epochs);
    config.validate()?;
    let net = load_network(&a.model)?;
    let (train, val) = load_subsets(&a.data)?;
    let rows = run_sweep(&net, &train, &val, &config, &grid, a.trials)?;
    emit(a.out.as_deref(), &sweep_csv(&rows))?;
    if let Some(path) = &a.svg {
        let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.mean_val_accuracy)).collect();
        // the chart is a convenience; failing to write it is not an error
        if let Err(e) = fs::write(path, svg::line_chart(&points, "t", "mean validation accuracy")) {
            eprintln!("warning: could not write {}: {e}", path.display());
        }
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    if a.samples == 0 {
        return Err(config_err("--samples must be at least 1"));
    }
    let net = load_network(&a.model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let samples: Vec<(Vector, usize)> = (0..a.samples)
        .map(|_| {
            let x: Vector = (0..net.input_len()).map(|_| rng.gen::<f64>()).collect();
            (x, rng.gen_range(0..net.num_classes))
        })
        .collect();
    let corrupt = a.corrupt_gradient;
    let report = gradcheck_with(&net, &samples, |g| {
        if corrupt {
            g.layers[0].weights[0] += 1e-2;
        }
    })?;
    println!(
        "max relative error {:.3e} over {} parameter checks ({} kink retries)",
        report.max_rel_error, report.params_checked, report.kink_retries
    );
    if let Some(w) = report.worst {
        println!(
            "worst: layer {} {} {}: analytic {:.6e}, numeric {:.6e}",
            w.layer,
            if w.is_bias { "bias" } else { "weight" },
            w.index,
            report.analytic_at_worst,
            report.numeric_at_worst
        );
    }
    if report.passed() {
        println!("PASS");
        Ok(())
    } else {
        Err(CheckFailed(format!(
            "gradient check failed: {:.3e} > {:.0e}",
            report.max_rel_error,
            affine_fold::train::GRADCHECK_TOLERANCE
        ))
        .into())
    }
}

pub fn export_matrix(a: ExportArgs) -> Result<()> {
    let net = load_network(&a.model)?;
    if a.layer == 0 || a.layer > net.depth() {
        return Err(Error::Range(format!("layer {} not in 1..={}", a.layer, net.depth())).into());
    }
    let layer = net.layer(a.layer);
    let m = match a.part.as_str() {
        "weight" => layer.weight_matrix(),
        "pad" => layer.pad_matrix(),
        "operator" => layer.operator().to_sparse(),
        "resample" => {
            let k = a.from.ok_or_else(|| config_err("--part resample needs --from"))?;
            net.resamplers
                .get(k, a.layer)
                .ok_or_else(|| config_err(format!("no skip from {k} into layer {}", a.layer)))?
                .matrix()
                .clone()
        }
        other => return Err(config_err(format!("unknown part '{other}'"))),
    };
    let mut buf = Vec::new();
    write_triplets(&m, &mut buf)?;
    emit(a.out.as_deref(), std::str::from_utf8(&buf)?)?;
    eprintln!("{}x{} matrix, {} nonzeros", m.rows(), m.cols(), m.nnz());
    Ok(())
}
