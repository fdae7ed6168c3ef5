use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::time::Duration;

use fedransom::corpus::{build_corpus, split, split_paths, Manifest, SplitSpec};
use fedransom::dataset::{stack_images, Sample};
use fedransom::fedavg::{client_id, evaluate, partition_indices_skewed, run_federation, ClientShard};
use fedransom::fedwire::{client_join, serve_listener, ServerConfig};
use fedransom::imagization::bytes_to_image;
use fedransom::metrics::{emit_report, EvalReport, HistoryRow, ReportFormat};
use fedransom::nn::{checkpoint, fit, predict, predict_samples, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::*;
use crate::config::Layers;
use crate::error::{CliError, CliResult};

const MANIFEST_NAME: &str = "manifest.jsonl";

fn ctx(what: impl AsRef<Path>) -> impl FnOnce(fedransom::Error) -> CliError {
    CliError::core(what.as_ref().display().to_string())
}

fn load_samples(path: &Path, side: usize) -> CliResult<Vec<Sample>> {
    let manifest = Manifest::read(path).map_err(ctx(path))?;
    manifest.load_samples(side).map_err(ctx(path))
}

fn load_optional(path: Option<&PathBuf>, side: usize) -> CliResult<Vec<Sample>> {
    path.map_or(Ok(Vec::new()), |p| load_samples(p, side))
}

fn write_splits(manifest: &Manifest, manifest_path: &Path, seed: u64) -> CliResult<()> {
    let parts = split(
        manifest,
        &SplitSpec {
            seed,
            ..SplitSpec::default()
        },
    )
    .map_err(ctx(manifest_path))?;
    let [train, val, test] = split_paths(manifest_path);
    for (m, p) in [(&parts.train, train), (&parts.val, val), (&parts.test, test)] {
        m.write(&p).map_err(ctx(&p))?;
        println!("{}: {} entries", p.display(), m.len());
    }
    Ok(())
}

fn finish(params: &ModelParams, report: &EvalReport, outputs: &Outputs) -> CliResult<()> {
    checkpoint::save(params, &outputs.checkpoint_out).map_err(ctx(&outputs.checkpoint_out))?;
    println!("checkpoint: {}", outputs.checkpoint_out.display());
    write_report(report, outputs.report_out.as_deref())
}

fn write_report(report: &EvalReport, path: Option<&Path>) -> CliResult<()> {
    let c = &report.confusion;
    if c.total() == 0 {
        println!("no evaluation data; history only");
    } else {
        println!(
            "accuracy {:.4}  tn {} fp {} fn {} tp {}  f1 benign {:.4} ransomware {:.4}",
            report.accuracy,
            c.true_negative,
            c.false_positive,
            c.false_negative,
            c.true_positive,
            report.classes[0].f1,
            report.classes[1].f1
        );
    }
    if let Some(path) = path {
        emit_report(report, path, ReportFormat::from_path(path)).map_err(ctx(path))?;
        println!("report: {}", path.display());
    }
    Ok(())
}

/// Evaluates on the validation set when there is one, otherwise on the training data.
fn final_report(params: &ModelParams, train: &[Sample], validation: &[Sample]) -> CliResult<EvalReport> {
    let target = if validation.is_empty() { train } else { validation };
    evaluate(params, target).map_err(CliError::core("evaluation"))
}

pub fn synth(a: SynthArgs) -> CliResult<()> {
    let layers = Layers::new(&a.common)?;
    let (n, sizes, seed) = layers.synth(a.n_per_class, a.min_size, a.max_size);
    let manifest = build_corpus(n, sizes, seed, &a.out).map_err(ctx(&a.out))?;
    let path = a.out.join(MANIFEST_NAME);
    manifest.write(&path).map_err(ctx(&path))?;
    println!("{}: {} entries", path.display(), manifest.len());
    write_splits(&manifest, &path, seed)
}

pub fn index(a: IndexArgs) -> CliResult<()> {
    let layers = Layers::new(&a.common)?;
    let (_, _, seed) = layers.synth(None, None, None);
    let manifest = Manifest::from_directory(&a.dir).map_err(ctx(&a.dir))?;
    let path = a.out.unwrap_or_else(|| a.dir.join(MANIFEST_NAME));
    manifest.write(&path).map_err(ctx(&path))?;
    println!(
        "{}: {} entries ({} benign, {} ransomware)",
        path.display(),
        manifest.len(),
        manifest.count_label(0),
        manifest.count_label(1)
    );
    if a.no_split {
        return Ok(());
    }
    write_splits(&manifest, &path, seed)
}

pub fn shard(a: ShardArgs) -> CliResult<()> {
    let layers = Layers::new(&a.common)?;
    let (fed, _) = layers.fed(&ModelFlags::default(), &a.fed)?;
    let manifest = Manifest::read(&a.manifest).map_err(ctx(&a.manifest))?;
    let labels: Vec<u8> = manifest.entries.iter().map(|e| e.label).collect();
    let groups =
        partition_indices_skewed(&labels, fed.n_clients, fed.seed, fed.label_skew).map_err(ctx(&a.manifest))?;
    std::fs::create_dir_all(&a.out).map_err(|e| ctx(&a.out)(e.into()))?;
    for (k, idx) in groups.into_iter().enumerate() {
        let entries = idx.into_iter().map(|i| manifest.entries[i].clone()).collect();
        let part = Manifest::new(entries, manifest.base_dir()).map_err(ctx(&a.manifest))?;
        let path = a.out.join(format!("{}.jsonl", client_id(k)));
        part.write(&path).map_err(ctx(&path))?;
        println!("{}: {} entries", path.display(), part.len());
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let layers = Layers::new(&a.common)?;
    let (config, shuffle_seed) = layers.train(&a.model, a.epochs, a.shuffle_seed)?;
    let train = load_samples(&a.manifest, config.side)?;
    let validation = load_optional(a.val_manifest.as_ref(), config.side)?;
    let initial = ModelParams::init(config.side, config.seed);
    let outcome = fit(
        &initial,
        &train,
        (!validation.is_empty()).then_some(validation.as_slice()),
        &config,
        &mut ChaCha8Rng::seed_from_u64(shuffle_seed),
    )
    .map_err(CliError::core("training"))?;
    for s in &outcome.history {
        log::info!(
            "epoch {} loss {:.5} train acc {:.4} val acc {:?}",
            s.epoch,
            s.loss,
            s.train_accuracy,
            s.val_accuracy
        );
    }
    let history = outcome
        .history
        .iter()
        .map(|s| HistoryRow {
            index: s.epoch,
            train_accuracy: Some(s.train_accuracy),
            val_accuracy: s.val_accuracy,
        })
        .collect();
    let report = final_report(&outcome.params, &train, &validation)?.with_history(history);
    finish(&outcome.params, &report, &a.outputs)
}

pub fn fedtrain(a: FedtrainArgs) -> CliResult<()> {
    let layers = Layers::new(&a.common)?;
    let (fed, local) = layers.fed(&a.model, &a.fed)?;
    let train = load_samples(&a.manifest, local.side)?;
    let validation = load_optional(a.val_manifest.as_ref(), local.side)?;
    let outcome = run_federation(&train, &validation, &fed, &local).map_err(CliError::core("federation"))?;
    let report = final_report(&outcome.params, &train, &validation)?.with_history(outcome.history());
    finish(&outcome.params, &report, &a.outputs)
}

pub fn serve_cmd(a: ServeArgs) -> CliResult<()> {
    let layers = Layers::new(&a.common)?;
    let (fed, local) = layers.fed(&a.model, &a.fed)?;
    let validation = load_optional(a.val_manifest.as_ref(), local.side)?;
    let config = ServerConfig {
        join_timeout: Duration::from_secs(a.join_timeout),
        idle_timeout: Duration::from_secs(a.idle_timeout),
        ..ServerConfig::new(fed, local)
    };
    let listener = TcpListener::bind(a.bind).map_err(|e| ctx(a.bind.to_string())(e.into()))?;
    let local_addr = listener.local_addr().map_err(|e| ctx(a.bind.to_string())(e.into()))?;
    println!("listening on {local_addr} for {} clients", config.fed.n_clients);
    std::io::stdout().flush().ok();
    let outcome = serve_listener(listener, &config, &validation).map_err(CliError::core("server"))?;
    let report = if validation.is_empty() {
        // No held-out data on the server: report history only.
        EvalReport::from_confusion(Default::default()).with_history(outcome.history())
    } else {
        final_report(&outcome.params, &[], &validation)?.with_history(outcome.history())
    };
    finish(&outcome.params, &report, &a.outputs)
}

pub fn client(a: ClientArgs) -> CliResult<()> {
    let layers = Layers::new(&a.common)?;
    let (_, local) = layers.fed(&a.model, &a.fed)?;
    let samples = load_samples(&a.manifest, local.side)?;
    let id = match a.client_id {
        Some(id) => id,
        None => a
            .manifest
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_owned)
            .ok_or_else(|| CliError::Usage("cannot derive a client id; pass --client-id".into()))?,
    };
    let shard = ClientShard { client_id: id, samples };
    let summary = client_join(a.connect, &shard, &local, Duration::from_secs(a.idle_timeout))
        .map_err(CliError::core(format!("client {}", shard.client_id)))?;
    println!("{}: completed {} rounds", shard.client_id, summary.rounds);
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    let params = checkpoint::load(&a.checkpoint).map_err(ctx(&a.checkpoint))?;
    let samples = load_samples(&a.manifest, params.side())?;
    let pred = predict_samples(&params, &samples, a.threshold).map_err(CliError::core("prediction"))?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let report = EvalReport::from_predictions(&pred.labels, &labels).map_err(CliError::core("evaluation"))?;
    write_report(&report, a.report_out.as_deref())
}

pub fn predict_cmd(a: PredictArgs) -> CliResult<()> {
    let params = checkpoint::load(&a.checkpoint).map_err(ctx(&a.checkpoint))?;
    let side = params.side();
    let mut images = Vec::with_capacity(a.files.len());
    for path in &a.files {
        let bytes = std::fs::read(path).map_err(|e| ctx(path)(e.into()))?;
        images.push(bytes_to_image(&bytes, side).map_err(ctx(path))?);
    }
    let batch = stack_images(&images).map_err(CliError::core("batch"))?;
    let pred = predict(&params, &batch, a.threshold).map_err(CliError::core("prediction"))?;
    for (i, path) in a.files.iter().enumerate() {
        println!(
            "{}\t{}\t{:.6}",
            path.display(),
            pred.labels[i],
            pred.ransomware_probability(i)
        );
    }
    Ok(())
}
