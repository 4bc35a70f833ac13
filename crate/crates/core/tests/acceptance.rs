//! Acceptance suite. Every criterion runs at its stated tolerance and
//! prints one PASS/FAIL line; the run exits nonzero if any criterion fails.
//!
//! MNIST is read from `$AFFINE_FOLD_DATA`, else `data/mnist` at the
//! workspace root.

use std::path::PathBuf;

use affine_fold::bench::{bench_predict, BenchOptions};
use affine_fold::data::{load_mnist, load_model, save_affine, save_network, subset, Dataset, Model, Split};
use affine_fold::layers::{pad_matrix, resample_matrix, PadSpec, ResampleSpec, TensorShape};
use affine_fold::train::{excise_skips, gradcheck, train_scheduled, SgdConfig, TSchedule, TrainHistory};
use affine_fold::{
    collapse_closed_form, collapse_network, flops_layered, forward_collapsed, forward_layered, preset, AffineMap,
    Network, Preset, Predictor, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.9, 1.0];
const LINEAR_PRESETS: [Preset; 4] = [Preset::Basic3, Preset::Basic6, Preset::DeepLinear(10), Preset::DeepLinear(34)];

type Check = std::result::Result<String, String>;

fn random_inputs(seed: u64, n: usize, d: usize) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// max |a - b| scaled by the larger logit magnitude (at least 1).
fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn data_dir() -> PathBuf {
    std::env::var_os("AFFINE_FOLD_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn one_hot_rows(m: &affine_fold::SparseMatrix) -> Vec<Vec<f64>> {
    let d = m.to_dense();
    (0..d.rows()).map(|r| d.row(r).to_vec()).collect()
}

fn fixtures() -> Check {
    let s22 = TensorShape::new(1, 2, 2).map_err(|e| e.to_string())?;
    let s34 = TensorShape::new(1, 3, 4).map_err(|e| e.to_string())?;
    let r = resample_matrix(&ResampleSpec::nearest(s22, s34)).map_err(|e| e.to_string())?;
    let want: Vec<Vec<f64>> = [0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]
        .iter()
        .map(|&k| (0..4).map(|c| if c == k { 1.0 } else { 0.0 }).collect())
        .collect();
    if one_hot_rows(&r) != want {
        return Err("resample matrix differs from fixture".into());
    }
    let (a, b, c, d) = (0.5, -1.25, 3.0, 7.75);
    let y = r.spmv(&[a, b, c, d]).map_err(|e| e.to_string())?;
    if y.as_slice() != [a, a, b, b, c, c, d, d, c, c, d, d] {
        return Err(format!("resampled layout {:?}", y.as_slice()));
    }
    let (p, out) = pad_matrix(&PadSpec::uniform(1), s22);
    let mut want = vec![vec![0.0; 4]; 16];
    for (row, col) in [(5, 0), (6, 1), (9, 2), (10, 3)] {
        want[row][col] = 1.0;
    }
    if out != TensorShape::new(1, 4, 4).map_err(|e| e.to_string())? || one_hot_rows(&p) != want {
        return Err("pad matrix differs from fixture".into());
    }
    Ok("resample 12x4, layout and pad 16x4 exact".into())
}

/// Collapsed vs layered logits; also returns every logit bit for the
/// determinism check.
fn equivalence() -> (Check, Vec<u64>) {
    let mut worst = 0.0f64;
    let mut fingerprint = Vec::new();
    for (pn, &p) in LINEAR_PRESETS.iter().enumerate() {
        for (tn, &t) in T_GRID.iter().enumerate() {
            let net = match preset(p, 7).and_then(|n| n.set_uniform_skip(t)) {
                Ok(n) => n,
                Err(e) => return (Err(format!("{p} t={t}: {e}")), fingerprint),
            };
            let map = match collapse_network(&net) {
                Ok(r) => r.map,
                Err(e) => return (Err(format!("{p} t={t}: {e}")), fingerprint),
            };
            fingerprint.extend(bits(map.weight().data()));
            fingerprint.extend(bits(map.bias()));
            for x in random_inputs(1000 + (pn * 10 + tn) as u64, 100, net.input_len()) {
                let a = forward_layered(&net, &x, false).unwrap().0;
                let b = forward_collapsed(&map, &x).unwrap();
                worst = worst.max(rel_diff(&a, &b));
                fingerprint.extend(bits(&a));
                fingerprint.extend(bits(&b));
            }
        }
    }
    let msg = format!("max relative logit error {worst:.3e} (tol 1e-9)");
    (if worst <= 1e-9 { Ok(msg) } else { Err(msg) }, fingerprint)
}

fn closed_form_agreement() -> Check {
    let mut worst = 0.0f64;
    let mut nets: Vec<(String, Network)> = Vec::new();
    for p in [Preset::Basic3, Preset::Basic6] {
        nets.push((p.to_string(), preset(p, 5).unwrap()));
    }
    for l in [1, 2, 5, 10, 20, 34] {
        nets.push((format!("deep_linear({l})"), preset(Preset::DeepLinear(l), 5).unwrap()));
    }
    for (name, net) in nets {
        let ff = excise_skips(&net.set_uniform_skip(0.0).unwrap()).unwrap();
        let a = collapse_closed_form(&ff).map_err(|e| format!("{name}: {e}"))?;
        let b = collapse_network(&ff).map_err(|e| format!("{name}: {e}"))?.map;
        let w = a.weight().max_abs_diff(b.weight()) / (1.0 + a.weight().max_abs());
        let c = a.bias().max_abs_diff(b.bias()) / (1.0 + a.bias().max_abs());
        worst = worst.max(w).max(c);
    }
    let msg = format!("max relative entry difference {worst:.3e} (tol 1e-12), L up to 34");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn superposition() -> Check {
    let mut worst = 0.0f64;
    for (pn, &p) in LINEAR_PRESETS.iter().enumerate() {
        let net = preset(p, 11).unwrap();
        let f = |v: &[f64]| forward_layered(&net, v, false).unwrap().0;
        let f0 = f(&vec![0.0; net.input_len()]);
        let xs = random_inputs(2000 + pn as u64, 100, net.input_len());
        let ys = random_inputs(3000 + pn as u64, 100, net.input_len());
        for (x, y) in xs.iter().zip(&ys) {
            let xy: Vec<f64> = x.iter().zip(y.iter()).map(|(a, b)| a + b).collect();
            let (fx, fy, fxy) = (f(x), f(y), f(&xy));
            let lhs: Vec<f64> = (0..fxy.len()).map(|n| fxy[n] + f0[n]).collect();
            let rhs: Vec<f64> = (0..fxy.len()).map(|n| fx[n] + fy[n]).collect();
            worst = worst.max(rel_diff(&lhs, &rhs));
        }
    }
    let msg = format!("max relative residual of f(x+y) + f(0) - f(x) - f(y): {worst:.3e} (tol 1e-9)");
    if worst <= 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn timing_opts() -> BenchOptions {
    BenchOptions {
        reps: 300,
        warmup: 30,
        seed: 0,
        batch: None,
    }
}

fn collapse_speedup() -> Check {
    let net = preset(Preset::DeepLinear(34), 0).unwrap();
    let map: AffineMap = collapse_network(&net).map_err(|e| e.to_string())?.map;
    let models: [(&str, &dyn Predictor); 2] = [("layered", &net), ("collapsed", &map)];
    let r = bench_predict(&models, &timing_opts()).map_err(|e| e.to_string())?;
    let time_ratio = r[1].median_us / r[0].median_us;
    let flop_ratio = map.flops() as f64 / flops_layered(&net) as f64;
    let msg = format!(
        "median {:.2} us -> {:.2} us (ratio {time_ratio:.3}, need <= 0.5); flops ratio {flop_ratio:.4} (need < 0.1)",
        r[0].median_us, r[1].median_us
    );
    if time_ratio <= 0.5 && flop_ratio < 0.1 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn excision_speedup() -> Check {
    let with_skips = preset(Preset::Basic6, 0).unwrap().set_uniform_skip(0.0).unwrap();
    let excised = excise_skips(&with_skips).map_err(|e| e.to_string())?;
    for x in random_inputs(4000, 50, with_skips.input_len()) {
        let a = forward_layered(&with_skips, &x, false).unwrap().0;
        let b = forward_layered(&excised, &x, false).unwrap().0;
        if bits(&a) != bits(&b) {
            return Err("logits changed by excision".into());
        }
    }
    let models: [(&str, &dyn Predictor); 2] = [("skips", &with_skips), ("excised", &excised)];
    let r = bench_predict(&models, &timing_opts()).map_err(|e| e.to_string())?;
    let ratio = r[1].median_us / r[0].median_us;
    let msg = format!(
        "median {:.2} us -> {:.2} us (ratio {ratio:.3}, need <= 0.93); logits bit-identical",
        r[0].median_us, r[1].median_us
    );
    if ratio <= 0.93 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn gradients() -> (Check, Vec<u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let samples: Vec<(Vector, usize)> = (0..5)
        .map(|_| ((0..784).map(|_| rng.gen::<f64>()).collect(), rng.gen_range(0..10)))
        .collect();
    let mut worst = 0.0f64;
    let mut fingerprint = Vec::new();
    for p in [Preset::Basic3, Preset::MnistClassifier] {
        let net = preset(p, 2).unwrap();
        match gradcheck(&net, &samples) {
            Ok(r) => {
                worst = worst.max(r.max_rel_error);
                fingerprint.extend(bits(&[r.max_rel_error, r.analytic_at_worst, r.numeric_at_worst]));
                fingerprint.push(r.kink_retries as u64);
            }
            Err(e) => return (Err(format!("{p}: {e}")), fingerprint),
        }
    }
    let msg = format!("max relative gradient error {worst:.3e} over 5 samples, linear and relu (tol 1e-4)");
    (if worst <= 1e-4 { Ok(msg) } else { Err(msg) }, fingerprint)
}

fn mnist_subsets() -> std::result::Result<(Dataset, Dataset), String> {
    let dir = data_dir();
    let train = load_mnist(&dir, Split::Train).map_err(|e| format!("MNIST train split in {}: {e}", dir.display()))?;
    let test = load_mnist(&dir, Split::Test).map_err(|e| format!("MNIST test split in {}: {e}", dir.display()))?;
    let train = subset(&train, 10_000, 1).map_err(|e| e.to_string())?;
    let val = subset(&test, 2_000, 2).map_err(|e| e.to_string())?;
    Ok((train, val))
}

fn homotopy_training() -> (Check, Option<(TrainHistory, TrainHistory, Vec<u64>)>) {
    let (train, val) = match mnist_subsets() {
        Ok(d) => d,
        Err(e) => return (Err(e), None),
    };
    let config = SgdConfig {
        learning_rate: 0.05,
        batch_size: 64,
        epochs: 10,
        rng_seed: 0,
    };
    let net = preset(Preset::MnistClassifier, 0).unwrap();
    let run = |schedule: TSchedule| train_scheduled(&net, &train, &val, &config, &schedule);
    let (decayed, h_decay) = match run(TSchedule::decay_from_0_9()) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), None),
    };
    let (_, h_const) = match run(TSchedule::constant(0.5, 10).unwrap()) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), None),
    };
    let a = h_decay.final_accuracy().unwrap_or(0.0);
    let b = h_const.final_accuracy().unwrap_or(0.0);
    let msg = format!(
        "scheduled final val accuracy {:.2}% (need >= 88%), constant t=0.5 {:.2}% (gap {:+.2} points, need within 3)",
        100.0 * a,
        100.0 * b,
        100.0 * (a - b)
    );
    let ok = a >= 0.88 && (a - b).abs() <= 0.03;
    (if ok { Ok(msg) } else { Err(msg) }, Some((h_decay, h_const, bits(&decayed.params()))))
}

fn round_trip() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut all = LINEAR_PRESETS.to_vec();
    all.push(Preset::MnistClassifier);
    let inputs = random_inputs(5000, 5, 784);
    let mut count = 0;
    for p in all {
        let net = preset(p, 3).unwrap();
        let stem = dir.path().join(format!("net{count}"));
        save_network(&stem, &net).map_err(|e| e.to_string())?;
        let Model::Network(back) = load_model(&stem).map_err(|e| e.to_string())? else {
            return Err(format!("{p} reloaded as an affine map"));
        };
        for x in &inputs {
            let a = forward_layered(&net, x, false).unwrap().0;
            let b = forward_layered(&back, x, false).unwrap().0;
            if bits(&a) != bits(&b) {
                return Err(format!("{p}: logits changed after reload"));
            }
        }
        count += 1;
        if net.is_linear() {
            let map = collapse_network(&net).map_err(|e| e.to_string())?.map;
            let stem = dir.path().join(format!("map{count}"));
            save_affine(&stem, &map).map_err(|e| e.to_string())?;
            let Model::Affine(back) = load_model(&stem).map_err(|e| e.to_string())? else {
                return Err(format!("collapsed {p} reloaded as a network"));
            };
            for x in &inputs {
                let a = forward_collapsed(&map, x).unwrap();
                let b = forward_collapsed(&back, x).unwrap();
                if bits(&a) != bits(&b) {
                    return Err(format!("collapsed {p}: logits changed after reload"));
                }
            }
            count += 1;
        }
    }
    Ok(format!("{count} models reloaded with bit-identical outputs"))
}

fn main() {
    let mut results: Vec<(&str, Check)> = Vec::new();
    results.push(("1 fixture exactness", fixtures()));

    let (eq, eq_bits) = equivalence();
    results.push(("2 collapse equivalence", eq));
    results.push(("3 closed-form agreement", closed_form_agreement()));
    results.push(("4 affineness", superposition()));
    results.push(("5 collapse speedup", collapse_speedup()));
    results.push(("6 excision speedup", excision_speedup()));

    let (gc, gc_bits) = gradients();
    results.push(("7 gradient correctness", gc));

    let (tr, tr_out) = homotopy_training();
    results.push(("8 homotopy training", tr));

    let determinism = (|| -> Check {
        if equivalence().1 != eq_bits {
            return Err("criterion 2 outputs differ between runs".into());
        }
        if gradients().1 != gc_bits {
            return Err("criterion 7 outputs differ between runs".into());
        }
        let (first_decay, first_const, first_params) =
            tr_out.ok_or("criterion 8 did not produce outputs to repeat")?;
        let (_, again) = homotopy_training();
        let (decay, constant, params) = again.ok_or("criterion 8 repeat failed")?;
        if !first_decay.same_outcome(&decay) || !first_const.same_outcome(&constant) || first_params != params {
            return Err("criterion 8 outputs differ between runs".into());
        }
        Ok("criteria 2, 7 and 8 repeated bit-identically (wall-clock fields excluded)".into())
    })();
    results.push(("9 determinism", determinism));
    results.push(("10 round trip", round_trip()));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("PASS {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} acceptance criteria failed", results.len());
        std::process::exit(1);
    }
    println!("all {} acceptance criteria passed", results.len());
}
