use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use msnn::data::netpbm::GrayImage;
use msnn::data::synth::{generate_synthetic, SynthConfig};
use msnn::data::{load_image, Dataset, ImageFormat, ImageRecord, Label, Manifest, WindowParams};
use msnn::evaluation::{confusion_from_labels, format_report, metrics, roc_auc, ConfusionMatrix, Metrics};
use msnn::explain::{caption, feature_maps, occlusion_map, overlay, upsample_map, visualize_filters, OcclusionConfig};
use msnn::knn::{elbow_select_k, extract_features, features_to_csv, KnnModel};
use msnn::layers::Loss;
use msnn::network::{Checkpoint, Msnn, NetworkSpec};
use msnn::training::{argmax, predict_indices, split_dataset, train, AdamConfig, SplitPlan, TrainConfig};
use msnn::{Error, Result};
use serde::Serialize;

use crate::record::RunRecord;
use crate::{
    Command, ElbowArgs, EvalArgs, ExplainArgs, FeatmapsArgs, FeaturesArgs, FiltersArgs, Head, LossArg, ParamtableArgs,
    Subset, SynthArgs, TargetArg, TrainArgs,
};

/// Images per forward pass outside training.
const CHUNK: usize = 32;

pub fn record_for(cmd: &Command) -> RunRecord {
    let (name, config, seed) = match cmd {
        Command::Train(a) => ("train", serde_json::to_value(a), Some(a.seed)),
        Command::Eval(a) => ("eval", serde_json::to_value(a), None),
        Command::Explain(a) => ("explain", serde_json::to_value(a), None),
        Command::Elbow(a) => ("elbow", serde_json::to_value(a), None),
        Command::Features(a) => ("features", serde_json::to_value(a), None),
        Command::Filters(a) => ("filters", serde_json::to_value(a), None),
        Command::Featmaps(a) => ("featmaps", serde_json::to_value(a), None),
        Command::Synth(a) => ("synth", serde_json::to_value(a), Some(a.seed)),
        Command::Paramtable(a) => ("paramtable", serde_json::to_value(a), None),
    };
    RunRecord::new(name, config.expect("arguments serialize"), seed)
}

pub fn run(cmd: &Command, rec: &mut RunRecord) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a, rec),
        Command::Eval(a) => cmd_eval(a, rec),
        Command::Explain(a) => cmd_explain(a, rec),
        Command::Elbow(a) => cmd_elbow(a, rec),
        Command::Features(a) => cmd_features(a, rec),
        Command::Filters(a) => cmd_filters(a, rec),
        Command::Featmaps(a) => cmd_featmaps(a, rec),
        Command::Synth(a) => cmd_synth(a, rec),
        Command::Paramtable(a) => cmd_paramtable(a),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>, rec: &mut RunRecord) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    rec.output(path)
}

/// `prefix` with `suffix` appended to its final component.
fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn load_data(path: &Path, window: Option<WindowParams>, rec: &mut RunRecord) -> Result<Dataset> {
    rec.input(path);
    Manifest::load(path)?.load_dataset(window)
}

fn load_net(path: &Path, extent: Option<usize>, rec: &mut RunRecord) -> Result<Msnn<f32>> {
    rec.input(path);
    let ckpt = Checkpoint::load(path)?;
    let spec = extent.map(NetworkSpec::msnn).transpose()?;
    Msnn::from_checkpoint(&ckpt, spec.as_ref())
}

fn load_image_any(path: &Path, window: Option<WindowParams>, rec: &mut RunRecord) -> Result<ImageRecord> {
    rec.input(path);
    load_image(path, ImageFormat::from_path(path)?, window)
}

fn load_plan(path: Option<&Path>, data: &Dataset, rec: &mut RunRecord) -> Result<SplitPlan> {
    let path = path.ok_or_else(|| {
        Error::InvalidArgument(
            "no split plan given; pass --plan <file>, e.g. the .split.json that `train` writes next to the checkpoint"
                .into(),
        )
    })?;
    rec.input(path);
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let plan = SplitPlan::from_json(&text)?;
    plan.validate(&data.labels)?;
    Ok(plan)
}

fn labels_at(data: &Dataset, idx: &[usize]) -> Vec<Label> {
    idx.iter().map(|&i| data.labels[i]).collect()
}

fn cmd_train(a: &TrainArgs, rec: &mut RunRecord) -> Result<()> {
    let data = load_data(&a.manifest, a.window.window, rec)?;
    if let Some(e) = a.extent {
        if e != data.extent {
            return Err(Error::InvalidArgument(format!(
                "--extent {e} does not match the manifest images, which have extent {}",
                data.extent
            )));
        }
    }
    let cfg = TrainConfig {
        batch_size: a.batch,
        epochs: a.epochs,
        adam: AdamConfig {
            learning_rate: a.lr,
            ..AdamConfig::default()
        },
        loss: match a.loss {
            LossArg::Mse => Loss::Mse,
            LossArg::CrossEntropy => Loss::CrossEntropy,
        },
        seed: a.seed,
        fraction: a.split,
        val_every: a.val_every,
    };
    cfg.validate()?;
    let spec = NetworkSpec::msnn(data.extent)?;
    let plan = split_dataset(&data.labels, a.split, a.seed)?;
    let out = train(Msnn::initialized(spec, a.seed), &data, &plan, &cfg)?;

    out.checkpoint.save(&a.out)?;
    rec.output(&a.out)?;
    write(&a.out.with_extension("curves.csv"), out.curves.to_csv(), rec)?;
    write(&a.out.with_extension("split.json"), plan.to_json(), rec)?;
    if let Some(p) = out.curves.points.last() {
        println!(
            "iteration {}: train accuracy {:.1}%, train loss {:.4}{}",
            p.iteration,
            p.train_acc,
            p.train_loss,
            p.val_acc.map_or(String::new(), |v| format!(", test accuracy {v:.1}%"))
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct HeadReport {
    head: &'static str,
    k: Option<usize>,
    confusion: ConfusionMatrix,
    metrics: Metrics,
    auc: f64,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    samples: usize,
    fraction: f64,
    seed: u64,
    heads: Vec<HeadReport>,
}

fn cmd_eval(a: &EvalArgs, rec: &mut RunRecord) -> Result<()> {
    let data = load_data(&a.manifest, a.window.window, rec)?;
    let plan = load_plan(a.plan.as_deref(), &data, rec)?;
    let net = load_net(&a.checkpoint, Some(data.extent), rec)?;
    let test = plan.test_indices();
    let truth = labels_at(&data, &test);

    let mut heads = Vec::new();
    if matches!(a.head, Head::Softmax | Head::Both) {
        let probs = predict_indices(&net, &data, &test, CHUNK)?;
        let preds: Vec<Label> = probs
            .iter()
            .map(|p| Label::from_class_index(argmax(p)).expect("two classes"))
            .collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[Label::Cancerous.class_index()] as f64).collect();
        heads.push(("softmax", None, preds, scores));
    }
    if matches!(a.head, Head::Knn | Head::Both) {
        let train_idx = plan.train_indices();
        let train_f = extract_features(&net, &data, &train_idx, CHUNK)?;
        let test_f = extract_features(&net, &data, &test, CHUNK)?;
        let model = KnnModel::new(
            train_f.into_iter().map(|f| f.values).collect(),
            labels_at(&data, &train_idx),
            a.k,
        )?;
        let queries: Vec<Vec<f32>> = test_f.into_iter().map(|f| f.values).collect();
        let preds = model.predict_many(&queries)?;
        let scores = preds.iter().map(|p| p.positive_fraction).collect();
        heads.push(("knn", Some(a.k), preds.iter().map(|p| p.label).collect(), scores));
    }

    let prefix = a.out.clone().unwrap_or_else(|| a.checkpoint.with_extension(""));
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    for (head, k, preds, scores) in heads {
        let cm = confusion_from_labels(&preds, &truth)?;
        let roc = roc_auc(&scores, &truth)?;
        write(&suffixed(&prefix, &format!(".roc-{head}.csv")), roc.to_csv(), rec)?;
        let m = metrics(&cm);
        rows.push((k.map_or(head.to_string(), |k| format!("{head}(k={k})")), m));
        reports.push(HeadReport {
            head,
            k,
            confusion: cm,
            metrics: m,
            auc: roc.auc,
        });
    }
    let report = EvalReport {
        samples: test.len(),
        fraction: plan.fraction,
        seed: plan.seed,
        heads: reports,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write(&suffixed(&prefix, ".eval.json"), json + "\n", rec)?;
    print!("{}", format_report(&rows));
    for r in &report.heads {
        let c = &r.confusion;
        println!(
            "{}: TP {} FP {} TN {} FN {}  AUC {:.4}",
            r.head, c.tp, c.fp, c.tn, c.fn_, r.auc
        );
    }
    Ok(())
}

fn cmd_explain(a: &ExplainArgs, rec: &mut RunRecord) -> Result<()> {
    let net = load_net(&a.checkpoint, None, rec)?;
    let image = load_image_any(&a.image, a.window.window, rec)?;
    let mut cfg = OcclusionConfig::for_extent(image.extent);
    if let Some(m) = a.mask_size {
        cfg.mask_size = m;
        cfg.stride = (m / 2).max(1);
    }
    if let Some(s) = a.stride {
        cfg.stride = s;
    }
    cfg.mask_value = a.mask_value;
    cfg.validate(image.extent)?;

    let probs = net.predict(&image.to_tensor())?.into_vec();
    let target = match a.target {
        TargetArg::Predicted => Label::from_class_index(argmax(&probs)).expect("two classes"),
        TargetArg::Cancerous => Label::Cancerous,
        TargetArg::NonCancerous => Label::NonCancerous,
    };
    let map = occlusion_map(&net, &image, target, &cfg)?;
    let prefix = a.out.clone().unwrap_or_else(|| a.image.with_extension(""));

    let ppm = suffixed(&prefix, ".overlay.ppm");
    overlay(&image, &map, a.alpha)?.write(&ppm)?;
    rec.output(&ppm)?;
    write(&suffixed(&prefix, ".map.csv"), map.to_csv(), rec)?;
    if a.gray {
        let g = GrayImage {
            width: image.extent,
            height: image.extent,
            data: upsample_map(&map).into_iter().map(|v| v as f32).collect(),
        };
        let p = suffixed(&prefix, ".map.pgm");
        g.to_pgm().write(&p)?;
        rec.output(&p)?;
    }
    let line = caption(&probs);
    write(&suffixed(&prefix, ".caption.txt"), format!("{line}\n"), rec)?;
    println!("{line}");
    Ok(())
}

fn cmd_elbow(a: &ElbowArgs, rec: &mut RunRecord) -> Result<()> {
    let data = load_data(&a.manifest, a.window.window, rec)?;
    let plan = load_plan(a.plan.as_deref(), &data, rec)?;
    let net = load_net(&a.checkpoint, Some(data.extent), rec)?;
    let (train_idx, test_idx) = (plan.train_indices(), plan.test_indices());
    let values = |f: Vec<msnn::knn::FeatureVector>| f.into_iter().map(|f| f.values).collect::<Vec<_>>();
    let train_f = values(extract_features(&net, &data, &train_idx, CHUNK)?);
    let test_f = values(extract_features(&net, &data, &test_idx, CHUNK)?);
    let curve = elbow_select_k(
        &train_f,
        &labels_at(&data, &train_idx),
        &test_f,
        &labels_at(&data, &test_idx),
        &a.k,
    )?;
    write(&a.out, curve.to_csv(), rec)?;
    println!("selected k = {}", curve.selected);
    Ok(())
}

fn cmd_features(a: &FeaturesArgs, rec: &mut RunRecord) -> Result<()> {
    let data = load_data(&a.manifest, a.window.window, rec)?;
    let idx = match a.subset {
        Subset::All => (0..data.len()).collect(),
        Subset::Train => load_plan(a.plan.as_deref(), &data, rec)?.train_indices(),
        Subset::Test => load_plan(a.plan.as_deref(), &data, rec)?.test_indices(),
    };
    let net = load_net(&a.checkpoint, Some(data.extent), rec)?;
    let features = extract_features(&net, &data, &idx, CHUNK)?;
    write(&a.out, features_to_csv(&features, &labels_at(&data, &idx)), rec)
}

fn cmd_filters(a: &FiltersArgs, rec: &mut RunRecord) -> Result<()> {
    let net = load_net(&a.checkpoint, None, rec)?;
    let sheet = visualize_filters(&net, a.layer)?;
    sheet.image.to_pgm().write(&a.out)?;
    rec.output(&a.out)?;
    println!("{} filters in a {}x{} grid", sheet.tiles, sheet.grid_rows, sheet.grid_cols);
    Ok(())
}

fn cmd_featmaps(a: &FeatmapsArgs, rec: &mut RunRecord) -> Result<()> {
    let net = load_net(&a.checkpoint, None, rec)?;
    let image = load_image_any(&a.image, a.window.window, rec)?;
    let sheet = feature_maps(&net, &image, a.layer)?;
    sheet.image.to_pgm().write(&a.out)?;
    rec.output(&a.out)?;
    println!(
        "{} maps of {}x{} in a {}x{} grid",
        sheet.tiles, sheet.tile_height, sheet.tile_width, sheet.grid_rows, sheet.grid_cols
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs, rec: &mut RunRecord) -> Result<()> {
    let corpus = generate_synthetic(&SynthConfig::new(a.pos, a.neg, a.extent, a.seed))?;
    let manifest = corpus.write_to(&a.out)?;
    rec.output(&manifest)?;
    rec.output(&a.out.join("blobs.csv"))?;
    for r in &corpus.records {
        rec.output(&a.out.join(format!("{}.pgm", r.id)))?;
    }
    println!("{} images written; manifest {}", corpus.records.len(), manifest.display());
    Ok(())
}

fn cmd_paramtable(a: &ParamtableArgs) -> Result<()> {
    let report = Msnn::<f32>::new(NetworkSpec::msnn(a.extent)?).param_report();
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}
