use std::path::Path;

use lmfnet::analysis::{analyze_network, analyze_stack, LayerStackSpec};
use lmfnet::gradcheck::{run_gradient_suite, SuiteOptions, SuiteReport};
use lmfnet::io::{cifar_batch, list_images, load_cifar, load_image, load_sod_samples, pair_sod_dataset, save_image};
use lmfnet::metrics::evaluate_dataset;
use lmfnet::net::{ClassifierNetwork, NetworkConfig, SodBlueprint, SodNetwork};
use lmfnet::training::{
    load_checkpoint, predict_sod, resize_bilinear, train_classifier, train_sod, ClassifierTrainReport, Recipe,
    SodTrainReport,
};
use lmfnet::{Error, Result, Shape, Tensor};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::{AnalyzeArgs, Cli, Command, EvalArgs, GradcheckArgs, OutputFormat, PredictArgs, TrainArgs};
use crate::{EXIT_CONFIG, EXIT_GATE, EXIT_NUMERICAL};

pub const LOSS_HISTORY: &str = "loss_history.json";

/// Runs the chosen subcommand; `Ok` carries the exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    let fmt = cli.output_format;
    match &cli.command {
        Command::Analyze(a) => analyze(a, fmt),
        Command::Train(a) => train(a, fmt),
        Command::Predict(a) => predict(a, fmt),
        Command::Eval(a) => eval(a, fmt),
        Command::Gradcheck(a) => gradcheck(a, fmt),
    }
}

fn emit(fmt: OutputFormat, text: impl FnOnce() -> String, json: impl FnOnce() -> String) {
    match fmt {
        OutputFormat::Text => print!("{}", text()),
        OutputFormat::Json => println!("{}", json()),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn analyze(a: &AnalyzeArgs, fmt: OutputFormat) -> Result<u8> {
    let passed = match (&a.config, &a.stack) {
        (_, Some(stack)) => {
            let report = analyze_stack(&LayerStackSpec::parse(stack)?)?;
            emit(fmt, || report.to_text(), || report.to_json());
            report.gridding.passed()
        }
        (Some(path), None) => {
            let report = analyze_network(&NetworkConfig::load(path)?)?;
            emit(fmt, || report.to_text(), || report.to_json());
            report.gridding.passed()
        }
        (None, None) => return Err(Error::InvalidArgument("analyze needs a config path or --stack".into())),
    };
    Ok(if passed { 0 } else { EXIT_GATE })
}

/// Losses only, so runs into different directories compare byte for byte.
fn write_history(out: &Path, history: serde_json::Value) -> Result<()> {
    let path = out.join(LOSS_HISTORY);
    std::fs::write(&path, to_json(&history)).map_err(|e| Error::io(&path, e))
}

fn recipe_for(a: &TrainArgs, classifier: bool) -> Result<Recipe> {
    let mut recipe = match &a.recipe {
        Some(p) => Recipe::load(p)?,
        None if classifier => Recipe::classifier_default(),
        None => Recipe::sod_default(),
    };
    if let Some(s) = a.seed {
        recipe.seed = s;
    }
    if let Some(e) = a.epochs {
        recipe.epochs = e;
    }
    if a.max_steps.is_some() {
        recipe.max_steps = a.max_steps;
    }
    recipe.strict_deterministic |= a.strict_deterministic;
    recipe.validate()?;
    Ok(recipe)
}

fn load_cifar_files(paths: &[std::path::PathBuf], classes: usize, limit: Option<usize>) -> Result<(Tensor<f64>, Vec<usize>)> {
    let mut records = Vec::new();
    for p in paths {
        records.extend(load_cifar(p, classes)?);
    }
    if let Some(n) = limit {
        records.truncate(n);
    }
    cifar_batch(&records)
}

fn train(a: &TrainArgs, fmt: OutputFormat) -> Result<u8> {
    let config = NetworkConfig::load(&a.config)?;
    let recipe = recipe_for(a, config.is_classifier())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    if config.is_classifier() {
        if a.cifar.is_empty() {
            return Err(Error::InvalidArgument("classifier training needs --cifar files".into()));
        }
        let mut net = ClassifierNetwork::<f64>::new(config, &mut rng)?;
        let classes = net.num_classes();
        let (x, y) = load_cifar_files(&a.cifar, classes, a.limit)?;
        let test = a.cifar_test.as_ref().map(|p| load_cifar_files(std::slice::from_ref(p), classes, None)).transpose()?;
        info!("training classifier on {} images for {} epochs", y.len(), recipe.epochs);
        let report = train_classifier(&mut net, &x, &y, &recipe, test.as_ref().map(|(x, y)| (x, y.as_slice())), Some(&a.out))?;
        write_history(
            &a.out,
            json!({"epoch_losses": report.epoch_losses, "train_accuracy": report.train_accuracy, "eval_accuracy": report.eval_accuracy}),
        )?;
        emit(fmt, || classifier_text(&report), || to_json(&report));
    } else {
        let (Some(images), Some(masks)) = (&a.images, &a.masks) else {
            return Err(Error::InvalidArgument("saliency training needs --images and --masks".into()));
        };
        let (pairs, warnings) = pair_sod_dataset(images, masks)?;
        warnings.iter().for_each(|w| warn!("{w}"));
        let (mut samples, warnings) = load_sod_samples(&pairs)?;
        warnings.iter().for_each(|w| warn!("{w}"));
        if let Some(n) = a.limit {
            samples.truncate(n);
        }
        let mut net = SodNetwork::<f64>::new(config, &mut rng)?;
        info!("training saliency network on {} pairs for {} epochs", samples.len(), recipe.epochs);
        let report = train_sod(&mut net, &samples, &recipe, Some(&a.out))?;
        write_history(&a.out, json!({"epoch_losses": report.epoch_losses, "step_losses": report.step_losses}))?;
        emit(fmt, || sod_text(&report), || to_json(&report));
    }
    Ok(0)
}

fn sod_text(r: &SodTrainReport) -> String {
    let mut s = String::new();
    for (e, l) in r.epoch_losses.iter().enumerate() {
        s.push_str(&format!("epoch {:>4} loss {l:.6}\n", e + 1));
    }
    s.push_str(&format!("steps {}\n", r.steps));
    for c in &r.checkpoints {
        s.push_str(&format!("checkpoint {}\n", c.display()));
    }
    s
}

fn classifier_text(r: &ClassifierTrainReport) -> String {
    let mut s = String::new();
    for (e, l) in r.epoch_losses.iter().enumerate() {
        s.push_str(&format!("epoch {:>4} loss {l:.6} train top1 {:.4}", e + 1, r.train_accuracy[e].top1));
        if let Some(acc) = r.eval_accuracy.get(e) {
            s.push_str(&format!(" eval top1 {:.4} top5 {:.4}", acc.top1, acc.top5));
        }
        s.push('\n');
    }
    s.push_str(&format!("steps {}\n", r.steps));
    s
}

fn to_three_channels(pixels: Tensor<f64>) -> Tensor<f64> {
    let s = pixels.shape();
    if s.c == 3 {
        pixels
    } else {
        Tensor::from_fn(s.with_c(3), |n, _, y, x| pixels.at(n, 0, y, x))
    }
}

fn predict(a: &PredictArgs, fmt: OutputFormat) -> Result<u8> {
    let ck = load_checkpoint(&a.checkpoint)?;
    if ck.meta.config.is_classifier() {
        return Err(Error::InvalidArgument(format!("{} holds a classifier, not a saliency network", a.checkpoint.display())));
    }
    let mut net = ck.build_sod::<f64>()?;
    let input = net.config().input;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    let mut errors = Vec::new();
    let mut jobs: Vec<(String, Tensor<f64>, (usize, usize))> = Vec::new();
    for (stem, path) in list_images(&a.images)? {
        let image = match load_image(&path) {
            Ok(rec) => to_three_channels(rec.pixels),
            Err(e) => {
                errors.push((path.display().to_string(), e.to_string()));
                continue;
            }
        };
        let s = image.shape();
        let original = (s.h, s.w);
        if original != (input.height, input.width) {
            if !a.resize {
                errors.push((
                    path.display().to_string(),
                    format!("image is {}x{}, network expects {}x{}; pass --resize", s.w, s.h, input.width, input.height),
                ));
                continue;
            }
            warn!("{}: resizing {}x{} to {}x{}", path.display(), s.w, s.h, input.width, input.height);
            jobs.push((stem, resize_bilinear(&image, input.height, input.width), original));
        } else {
            jobs.push((stem, image, original));
        }
    }
    let images: Vec<Tensor<f64>> = jobs.iter().map(|j| j.1.clone()).collect();
    let maps = predict_sod(&mut net, &images, a.batch_size)?;
    let mut written = Vec::new();
    for ((stem, _, (h, w)), map) in jobs.iter().zip(maps) {
        let map = if map.shape() == Shape::new(1, 1, *h, *w) { map } else { resize_bilinear(&map, *h, *w) };
        let path = a.out.join(format!("{stem}.pgm"));
        save_image(&map, &path)?;
        written.push(path.display().to_string());
    }
    for (f, e) in &errors {
        log::error!("{f}: {e}");
    }
    emit(
        fmt,
        || written.iter().map(|p| format!("wrote {p}\n")).collect(),
        || {
            let errs: Vec<_> = errors.iter().map(|(f, e)| json!({"file": f, "error": e})).collect();
            to_json(&json!({"written": written, "errors": errs}))
        },
    );
    Ok(if errors.is_empty() { 0 } else { EXIT_CONFIG })
}

fn eval(a: &EvalArgs, fmt: OutputFormat) -> Result<u8> {
    let report = evaluate_dataset(&a.pred, &a.gt)?;
    if let Some(p) = &a.csv {
        std::fs::write(p, report.curves_csv()).map_err(|e| Error::io(p, e))?;
    }
    if let Some(p) = &a.report {
        std::fs::write(p, report.to_json()).map_err(|e| Error::io(p, e))?;
    }
    emit(fmt, || report.to_text(), || report.to_json());
    Ok(0)
}

fn suite_text(r: &SuiteReport) -> String {
    let mut s = String::new();
    for e in &r.entries {
        let rep = &e.report;
        let verdict = if rep.passed(r.options.tolerance) { "PASS" } else { "FAIL" };
        s.push_str(&format!(
            "{verdict} {:<36} max rel {:.3e} checked {:>5} skipped {:>5}",
            e.name,
            rep.max_rel_error(),
            rep.checked(),
            rep.skipped()
        ));
        if let Some(f) = &rep.failure {
            s.push_str(&format!(" ({f})"));
        }
        s.push('\n');
    }
    s.push_str(&format!(
        "gradient suite {}: max rel error {:.3e} (tolerance {:.0e}, eps {:.0e})\n",
        if r.passed() { "PASS" } else { "FAIL" },
        r.max_rel_error(),
        r.options.tolerance,
        r.options.eps
    ));
    s
}

fn gradcheck(a: &GradcheckArgs, fmt: OutputFormat) -> Result<u8> {
    let config = match &a.config {
        Some(p) => NetworkConfig::load(p)?,
        None => SodBlueprint::tiny(8).build(32, 32)?,
    };
    let opts = SuiteOptions { seed: a.seed, per_tensor: a.per_tensor, ..SuiteOptions::default() };
    let report = run_gradient_suite(&config, &opts)?;
    emit(fmt, || suite_text(&report), || to_json(&report));
    Ok(if report.passed() { 0 } else { EXIT_NUMERICAL })
}
