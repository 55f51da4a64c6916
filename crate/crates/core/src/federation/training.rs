use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::client::floats;
use super::{
    client_grad_step, client_prompt_step, client_prompt_update, server_backprop_step,
    server_embed_step, stream, ByteLog, ClientState, FederationError, ServerSession, ServerState,
    Transport,
};
use crate::accounting::{comm_accounting, AccountingConfig, AccountingReport};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::codec::{decode_message, encode_message, Message, MessageKind, Payload};
use crate::config::{DataSource, Execution, ExperimentConfig, Mode, PromptKind};
use crate::encoder::{
    gnn_forward, head_forward, loss_and_grad, EncoderParams, HeadParams, ParamVector,
};
use crate::graph::readout;
use crate::hidta::{aggregate, compute_transfer_matrix, weighted_sum, HidtaError, TransferMatrix};
use crate::metrics::{accuracy_f1, data_heterogeneity, task_heterogeneity};
use crate::privacy::{laplace_privatize, stream_id, PrivacyConfig};
use crate::prompt::{ClientPrompt, GpfPrompt};
use crate::tasks::{
    build_task_samples, dirichlet_partition, load_dataset, synth_dataset_with, Partition,
    RawDataset, Sample, SynthOptions, TaskLevel,
};
use crate::vpg::PromptParams;

// seed-derivation tags
const TAG_SAMPLES: u64 = 101;
const TAG_PARTITION: u64 = 102;
const TAG_SPLIT: u64 = 103;
const TAG_ENCODER: u64 = 104;
const TAG_PROMPT: u64 = 105;
const TAG_HEAD: u64 = 106;
const TAG_ORDER: u64 = 107;

/// Everything a run mutates: the server and its clients.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub n_classes: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClientRoundLog {
    pub client: u32,
    pub task: TaskLevel,
    /// Mean training loss over the round (initial loss at round 0).
    pub loss: f64,
    pub acc: f64,
    pub f1: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    #[serde(skip)]
    pub bytes: ByteLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: u32,
    pub clients: Vec<ClientRoundLog>,
    /// Mean `Δ_T` over client pairs after aggregation.
    pub delta_t: f64,
    /// Mean `Δ_D` over client pairs, from per-client mean pooled embeddings.
    pub delta_d: f64,
    pub tau: Option<TransferMatrix>,
}

impl RoundLog {
    fn mean(&self, f: impl Fn(&ClientRoundLog) -> f64) -> f64 {
        let vals: Vec<f64> = self
            .clients
            .iter()
            .map(f)
            .filter(|v| v.is_finite())
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn mean_loss(&self) -> f64 {
        self.mean(|c| c.loss)
    }

    pub fn mean_acc(&self) -> f64 {
        self.mean(|c| c.acc)
    }

    pub fn mean_f1(&self) -> f64 {
        self.mean(|c| c.f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundSummary {
    pub round: u32,
    pub loss: f64,
    pub acc: f64,
    pub f1: f64,
    pub delta_t: f64,
    pub delta_d: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub mode: String,
    pub seed: u64,
    pub rounds_run: usize,
    pub early_stopped: bool,
    pub final_acc: f64,
    pub final_f1: f64,
    pub final_clients: Vec<ClientRoundLog>,
    pub rounds: Vec<RoundSummary>,
    pub bytes_by_kind: BTreeMap<String, u64>,
    pub accounting: AccountingReport,
    #[serde(skip)]
    pub logs: Vec<RoundLog>,
}

pub fn load_raw(cfg: &ExperimentConfig) -> Result<RawDataset, FederationError> {
    Ok(match &cfg.data {
        DataSource::Synthetic {
            nodes,
            classes,
            feature_dim,
            homophily,
            avg_degree,
            separation,
            noise,
        } => synth_dataset_with(
            *nodes,
            *classes,
            *feature_dim,
            *homophily,
            cfg.seed,
            SynthOptions {
                avg_degree: *avg_degree,
                separation: *separation,
                noise: *noise,
            },
        )?,
        DataSource::Files { nodes, edges } => load_dataset(nodes, edges)?,
    })
}

fn split_client(
    mut samples: Vec<Sample>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> (Vec<Sample>, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let mut n_test = (samples.len() as f64 * cfg.test_fraction).round() as usize;
    if cfg.test_fraction > 0.0 && n_test == 0 && samples.len() >= 2 {
        n_test = 1;
    }
    let mut train = samples.split_off(n_test);
    if let Some(cap) = cfg.few_shot {
        train.truncate(cap);
    }
    (train, samples)
}

/// Samples of every configured task level and their client partition.
pub fn task_partitions(
    cfg: &ExperimentConfig,
    raw: &RawDataset,
) -> Result<Vec<(TaskLevel, Vec<Sample>, Partition)>, FederationError> {
    cfg.tasks
        .iter()
        .map(|&level| {
            let lt = level as u64;
            let samples = build_task_samples(
                raw,
                level,
                cfg.kappa,
                cfg.max_samples,
                stream_id(&[cfg.seed, TAG_SAMPLES, lt]),
            )?;
            let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            let part = dirichlet_partition(
                &labels,
                cfg.clients_per_task,
                cfg.partition_alpha,
                stream_id(&[cfg.seed, TAG_PARTITION, lt]),
            )?;
            Ok((level, samples, part))
        })
        .collect()
}

/// Builds data, partitions it and initializes server and clients.
///
/// Clients are numbered by task level (node, edge, graph), then by partition
/// slot. All clients start from the same prompt and head.
pub fn build_experiment(cfg: &ExperimentConfig) -> Result<Experiment, FederationError> {
    cfg.validate()?;
    let raw = load_raw(cfg)?;
    let d0 = raw.graph.feature_dim();
    let seed = cfg.seed;
    let prompt = match cfg.prompt {
        PromptKind::Vpg => {
            let mut p = PromptParams::seeded(d0, cfg.k_prime, stream_id(&[seed, TAG_PROMPT]));
            p.alpha_n = cfg.alpha_n;
            p.alpha_e = cfg.alpha_e;
            p.gamma = cfg.gamma;
            p.attach_rule = cfg.attach_rule;
            p.learnable_candidates = cfg.learnable_candidates;
            p.validate()?;
            ClientPrompt::Vpg(p)
        }
        PromptKind::Gpf => ClientPrompt::Gpf(GpfPrompt {
            vector: Array1::zeros(d0),
        }),
    };
    let head = HeadParams::glorot(cfg.hidden_dim, raw.n_classes, stream_id(&[seed, TAG_HEAD]));
    let mut clients = Vec::new();
    for (level, samples, part) in task_partitions(cfg, &raw)? {
        let lt = level as u64;
        for (slot, idx) in part.assignments.iter().enumerate() {
            let id = clients.len() as u32;
            let mine = idx.iter().map(|&i| samples[i].clone()).collect();
            let (train, test) =
                split_client(mine, cfg, stream_id(&[seed, TAG_SPLIT, lt, slot as u64]));
            clients.push(ClientState::new(
                id,
                level,
                prompt.clone(),
                head.clone(),
                train,
                test,
            )?);
        }
    }
    let encoder = EncoderParams::glorot(
        d0,
        cfg.hidden_dim,
        cfg.layers,
        stream_id(&[seed, TAG_ENCODER]),
    );
    let server = ServerState::new(encoder, cfg.encoder_lr, cfg.freeze_encoder, clients.len());
    Ok(Experiment {
        config: cfg.clone(),
        server,
        clients,
        n_classes: raw.n_classes,
        feature_dim: d0,
    })
}

/// In-process evaluation of `samples` (DP applied, no byte accounting).
/// Returns `(loss, acc, f1)`, all NaN for an empty set.
pub fn evaluate_client(
    client: &ClientState,
    encoder: &EncoderParams,
    samples: &[Sample],
    n_classes: usize,
    privacy: &PrivacyConfig,
    round: u32,
) -> Result<(f64, f64, f64), FederationError> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN, f64::NAN));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut loss = 0.0;
    for (k, s) in samples.iter().enumerate() {
        let ids = [round as u64, client.id as u64, k as u64];
        let (prompted, _) = client.prompt.forward(&s.graph)?;
        let x = laplace_privatize(
            prompted.features().as_slice().expect("standard layout"),
            privacy,
            stream_id(&[stream::EVAL_FEATURES, ids[0], ids[1], ids[2]]),
        )?;
        let prompted = prompted.with_features(
            ndarray::Array2::from_shape_vec(prompted.features().dim(), x).expect("shape"),
        )?;
        let (h, _) = gnn_forward(encoder, &prompted)?;
        let hv = laplace_privatize(
            h.as_slice().expect("standard layout"),
            privacy,
            stream_id(&[stream::EVAL_EMBEDDING, ids[0], ids[1], ids[2]]),
        )?;
        let h = ndarray::Array2::from_shape_vec(h.dim(), hv).expect("shape");
        let logits = head_forward(&client.head, &readout(&h)?)?;
        loss += loss_and_grad(&logits, s.label)?.0;
        let pred = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &z)| {
                if z > best.1 {
                    (i, z)
                } else {
                    best
                }
            })
            .0;
        preds.push(pred);
        labels.push(s.label);
    }
    let (acc, f1) = accuracy_f1(&preds, &labels, n_classes)?;
    Ok((loss / samples.len() as f64, acc, f1))
}

/// Unweighted mean of all client parameters.
pub fn fedavg_aggregate(params: &[ParamVector]) -> Result<ParamVector, HidtaError> {
    let first = params.first().ok_or(HidtaError::ShapeMismatch)?;
    if params
        .iter()
        .any(|p| p.layout != first.layout || p.len() != first.len())
    {
        return Err(HidtaError::ShapeMismatch);
    }
    let w = vec![1.0 / params.len() as f64; params.len()];
    Ok(weighted_sum(params, &w))
}

struct EpochStats {
    loss_sum: f64,
    samples: usize,
    pooled_sum: Option<Array1<f64>>,
}

/// One local epoch of split training for one client against the snapshot.
fn local_epoch(
    client: &mut ClientState,
    encoder: &EncoderParams,
    session: &mut ServerSession,
    link: &mut Transport,
    cfg: &ExperimentConfig,
    privacy: &PrivacyConfig,
    round: u32,
) -> Result<EpochStats, FederationError> {
    let mut order: Vec<usize> = (0..client.train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_id(&[
        cfg.seed,
        TAG_ORDER,
        round as u64,
        client.id as u64,
    ]));
    order.shuffle(&mut rng);
    let mut stats = EpochStats {
        loss_sum: 0.0,
        samples: 0,
        pooled_sum: None,
    };
    for (seq, &k) in order.iter().enumerate() {
        let seq = seq as u64;
        let up = link.deliver(client_prompt_step(client, k, round, seq, privacy)?)?;
        let down = link.deliver(server_embed_step(encoder, session, &up, privacy)?)?;
        let (step, up) = client_grad_step(client, &down, cfg.lr, seq, privacy)?;
        let up = link.deliver(up)?;
        let down = link.deliver(server_backprop_step(encoder, session, &up)?)?;
        client_prompt_update(client, &down, cfg.lr)?;
        stats.loss_sum += step.loss;
        stats.samples += 1;
        match stats.pooled_sum.as_mut() {
            None => stats.pooled_sum = Some(step.pooled),
            Some(acc) => *acc += &step.pooled,
        }
    }
    Ok(stats)
}

fn upload(
    client: &ClientState,
    round: u32,
    cfg: &ExperimentConfig,
    privacy: &PrivacyConfig,
    link: &mut Transport,
) -> Result<ParamVector, FederationError> {
    let theta = client.params();
    let values = if cfg.dp_on_params {
        laplace_privatize(
            &theta.values,
            privacy,
            stream_id(&[stream::PARAMS, round as u64, client.id as u64]),
        )?
    } else {
        theta.values.clone()
    };
    let frame = link.deliver(encode_message(&Message {
        kind: MessageKind::ParamUpload,
        round,
        client_id: client.id,
        payload: Payload::Floats(values),
    })?)?;
    let msg = decode_message(&frame)?;
    if msg.kind != MessageKind::ParamUpload {
        return Err(FederationError::UnexpectedKind {
            expected: MessageKind::ParamUpload,
            found: msg.kind,
        });
    }
    let values = floats(msg)?;
    if values.len() != theta.len() {
        return Err(FederationError::StaleState(
            "parameter upload has the wrong length".into(),
        ));
    }
    Ok(ParamVector {
        values,
        layout: theta.layout,
    })
}

fn send_update(
    client: &mut ClientState,
    received: &ParamVector,
    target: &ParamVector,
    round: u32,
    link: &mut Transport,
) -> Result<(), FederationError> {
    let delta: Vec<f64> = target
        .values
        .iter()
        .zip(&received.values)
        .map(|(t, r)| t - r)
        .collect();
    let frame = link.deliver(encode_message(&Message {
        kind: MessageKind::ParamUpdate,
        round,
        client_id: client.id,
        payload: Payload::Floats(delta),
    })?)?;
    let msg = decode_message(&frame)?;
    if msg.kind != MessageKind::ParamUpdate || msg.client_id != client.id {
        return Err(FederationError::StaleState(
            "misrouted parameter update".into(),
        ));
    }
    let delta = floats(msg)?;
    let mut theta = client.params();
    if delta.len() != theta.len() {
        return Err(FederationError::StaleState(
            "parameter update has the wrong length".into(),
        ));
    }
    theta
        .values
        .iter_mut()
        .zip(&delta)
        .for_each(|(t, d)| *t += d);
    client.load_params(&theta)
}

/// Round-0 parameter upload so the server knows every client's starting point.
fn initial_upload(exp: &mut Experiment, links: &mut [Transport]) -> Result<(), FederationError> {
    let privacy = exp.config.privacy();
    for (c, link) in exp.clients.iter().zip(links.iter_mut()) {
        let p = upload(c, 0, &exp.config, &privacy, link)?;
        exp.server.client_params[c.id as usize] = Some(p);
    }
    Ok(())
}

fn mean_pairwise(n: usize, f: impl Fn(usize, usize) -> Option<f64>) -> f64 {
    let vals: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter_map(|(i, j)| f(i, j))
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// One federated round: local split training, then the aggregation barrier.
pub fn run_round(exp: &mut Experiment, round: u32) -> Result<RoundLog, FederationError> {
    let cfg = exp.config.clone();
    let privacy = cfg.privacy();
    let n = exp.clients.len();
    let mut sessions: Vec<ServerSession> = exp
        .clients
        .iter()
        .map(|c| ServerSession::new(c.id, !cfg.freeze_encoder))
        .collect();
    let mut links = vec![Transport::default(); n];
    let encoder = &exp.server.encoder;
    let stats: Vec<EpochStats> = match cfg.execution {
        Execution::Sequential => exp
            .clients
            .iter_mut()
            .zip(&mut sessions)
            .zip(&mut links)
            .map(|((c, s), l)| local_epoch(c, encoder, s, l, &cfg, &privacy, round))
            .collect::<Result<_, _>>()?,
        Execution::Parallel => std::thread::scope(|scope| {
            let handles: Vec<_> = exp
                .clients
                .iter_mut()
                .zip(&mut sessions)
                .zip(&mut links)
                .map(|((c, s), l)| {
                    let (cfg, privacy) = (&cfg, &privacy);
                    scope.spawn(move || local_epoch(c, encoder, s, l, cfg, privacy, round))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("client thread panicked"))
                .collect::<Result<Vec<_>, _>>()
        })?,
    };

    // barrier: aggregation, then the encoder step
    let mut tau = None;
    if cfg.mode != Mode::Local {
        let received: Vec<ParamVector> = exp
            .clients
            .iter()
            .zip(&mut links)
            .map(|(c, l)| upload(c, round, &cfg, &privacy, l))
            .collect::<Result<_, _>>()?;
        let targets = match cfg.mode {
            Mode::FedGpl => {
                let prev: Vec<ParamVector> = (0..n)
                    .map(|i| {
                        exp.server.client_params[i]
                            .clone()
                            .unwrap_or_else(|| received[i].clone())
                    })
                    .collect();
                let levels: Vec<TaskLevel> = exp.clients.iter().map(|c| c.level).collect();
                let theta: Vec<&[f64]> = prev.iter().map(|p| p.values.as_slice()).collect();
                let theta_next: Vec<&[f64]> =
                    received.iter().map(|p| p.values.as_slice()).collect();
                let m = compute_transfer_matrix(&levels, &theta, &theta_next, cfg.hidta)?;
                let out = aggregate(&received, &m)?;
                exp.server.tau_history.push((round, m.clone()));
                tau = Some(m);
                out
            }
            _ => vec![fedavg_aggregate(&received)?; n],
        };
        for (i, c) in exp.clients.iter_mut().enumerate() {
            send_update(c, &received[i], &targets[i], round, &mut links[i])?;
            exp.server.client_params[i] = Some(targets[i].clone());
        }
    }
    exp.server.apply_encoder_grads(&sessions);

    let params: Vec<ParamVector> = exp.clients.iter().map(|c| c.params()).collect();
    let delta_t = mean_pairwise(n, |i, j| {
        task_heterogeneity(
            &params[i].values,
            &params[j].values,
            exp.clients[i].level,
            exp.clients[j].level,
        )
        .ok()
    });
    let pooled: Vec<Option<Array1<f64>>> = stats
        .iter()
        .map(|s| s.pooled_sum.as_ref().map(|p| p / s.samples as f64))
        .collect();
    let delta_d = mean_pairwise(n, |i, j| match (&pooled[i], &pooled[j]) {
        (Some(a), Some(b)) => data_heterogeneity(a.as_slice()?, b.as_slice()?).ok(),
        _ => None,
    });
    let mut clients = Vec::with_capacity(n);
    for ((c, s), l) in exp.clients.iter().zip(&stats).zip(&links) {
        let (_, acc, f1) = evaluate_client(
            c,
            &exp.server.encoder,
            &c.test,
            exp.n_classes,
            &privacy,
            round,
        )?;
        clients.push(ClientRoundLog {
            client: c.id,
            task: c.level,
            loss: if s.samples > 0 {
                s.loss_sum / s.samples as f64
            } else {
                f64::NAN
            },
            acc,
            f1,
            bytes_up: l.log.up(),
            bytes_down: l.log.down(),
            bytes: l.log.clone(),
        });
    }
    Ok(RoundLog {
        round,
        clients,
        delta_t,
        delta_d,
        tau,
    })
}

fn initial_log(exp: &mut Experiment) -> Result<RoundLog, FederationError> {
    let privacy = exp.config.privacy();
    let mut links = vec![Transport::default(); exp.clients.len()];
    if exp.config.mode != Mode::Local {
        initial_upload(exp, &mut links)?;
    }
    let mut clients = Vec::new();
    for (c, l) in exp.clients.iter().zip(&links) {
        let (loss, _, _) =
            evaluate_client(c, &exp.server.encoder, &c.train, exp.n_classes, &privacy, 0)?;
        let (_, acc, f1) =
            evaluate_client(c, &exp.server.encoder, &c.test, exp.n_classes, &privacy, 0)?;
        clients.push(ClientRoundLog {
            client: c.id,
            task: c.level,
            loss,
            acc,
            f1,
            bytes_up: l.log.up(),
            bytes_down: l.log.down(),
            bytes: l.log.clone(),
        });
    }
    let params: Vec<ParamVector> = exp.clients.iter().map(|c| c.params()).collect();
    let n = params.len();
    let delta_t = mean_pairwise(n, |i, j| {
        task_heterogeneity(
            &params[i].values,
            &params[j].values,
            exp.clients[i].level,
            exp.clients[j].level,
        )
        .ok()
    });
    Ok(RoundLog {
        round: 0,
        clients,
        delta_t,
        delta_d: 0.0,
        tau: None,
    })
}

fn accounting_for(exp: &Experiment) -> AccountingReport {
    let sizes: Vec<usize> = exp
        .clients
        .iter()
        .flat_map(|c| c.train.iter().map(|s| s.graph.node_count()))
        .collect();
    let n_source = if sizes.is_empty() {
        0
    } else {
        (sizes.iter().sum::<usize>() as f64 / sizes.len() as f64).round() as usize
    };
    let cfg = &exp.config;
    comm_accounting(&AccountingConfig {
        hidden_dim: cfg.hidden_dim,
        feature_dim: exp.feature_dim,
        n_classes: exp.n_classes,
        n_source,
        alpha_n: cfg.alpha_n,
        k_prime: cfg.k_prime,
        head_comm_size: cfg.hidden_dim * exp.n_classes,
        ..AccountingConfig::table7()
    })
}

fn train(cfg: &ExperimentConfig) -> Result<(Experiment, ExperimentReport), FederationError> {
    let mut exp = build_experiment(cfg)?;
    let mut logs = vec![initial_log(&mut exp)?];
    let mut early_stopped = false;
    for r in 1..=cfg.rounds {
        logs.push(run_round(&mut exp, r as u32)?);
        if cfg.early_stop_tol > 0.0 && r >= 5 {
            let gain = logs[r - 5].mean_loss() - logs[r].mean_loss();
            if gain < cfg.early_stop_tol {
                early_stopped = true;
                break;
            }
        }
    }
    let mut total = ByteLog::default();
    for l in &logs {
        for c in &l.clients {
            total.merge(&c.bytes);
        }
    }
    let last = logs.last().expect("round 0 is always logged");
    let report = ExperimentReport {
        mode: cfg.mode.to_string(),
        seed: cfg.seed,
        rounds_run: logs.len() - 1,
        early_stopped,
        final_acc: last.mean_acc(),
        final_f1: last.mean_f1(),
        final_clients: last.clients.clone(),
        rounds: logs
            .iter()
            .map(|l| RoundSummary {
                round: l.round,
                loss: l.mean_loss(),
                acc: l.mean_acc(),
                f1: l.mean_f1(),
                delta_t: l.delta_t,
                delta_d: l.delta_d,
                bytes_up: l.clients.iter().map(|c| c.bytes_up).sum(),
                bytes_down: l.clients.iter().map(|c| c.bytes_down).sum(),
            })
            .collect(),
        bytes_by_kind: total
            .by_kind
            .iter()
            .map(|(k, b)| (k.name().to_string(), *b))
            .collect(),
        accounting: accounting_for(&exp),
        logs,
    };
    Ok((exp, report))
}

/// Runs a full experiment in memory.
pub fn run_training(cfg: &ExperimentConfig) -> Result<ExperimentReport, FederationError> {
    Ok(train(cfg)?.1)
}

/// Runs a full experiment and writes `rounds.csv`, `tau.csv`, `report.json`
/// and `checkpoint.bin` into `dir`.
pub fn run_training_in(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<ExperimentReport, FederationError> {
    let (exp, report) = train(cfg)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("rounds.csv"), rounds_csv(&report.logs))?;
    fs::write(dir.join("tau.csv"), tau_csv(&exp.server.tau_history))?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    save_checkpoint(
        &dir.join("checkpoint.bin"),
        &Checkpoint {
            round: report.rounds_run as u32,
            encoder: exp.server.encoder.clone(),
            clients: exp.clients.iter().map(|c| c.params()).collect(),
        },
    )?;
    Ok(report)
}

pub fn rounds_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from("round,client,task,loss,acc,f1,bytes_up,bytes_down\n");
    for l in logs {
        for c in &l.clients {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6},{},{}",
                l.round, c.client, c.task, c.loss, c.acc, c.f1, c.bytes_up, c.bytes_down
            )
            .expect("write to string");
        }
    }
    out
}

pub fn tau_csv(history: &[(u32, TransferMatrix)]) -> String {
    let mut out = String::from("round,i,j,tau\n");
    for (round, m) in history {
        for i in 0..m.len() {
            for j in 0..m.len() {
                writeln!(out, "{round},{i},{j},{:e}", m.get(i, j)).expect("write to string");
            }
        }
    }
    out
}
