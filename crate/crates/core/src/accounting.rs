//! Parameter and communication accounting in parameter units.
//!
//! Sizes are counts of real numbers, not bytes; the byte-exact wire totals
//! come from the transport logs in [`crate::federation`].

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccountingConfig {
    /// Encoder output dim `d`.
    pub hidden_dim: usize,
    /// Raw feature dim `d0`.
    pub feature_dim: usize,
    pub n_classes: usize,
    /// Nodes in a source graph.
    pub n_source: usize,
    pub alpha_n: f64,
    pub k_prime: usize,
    /// Head units exchanged per direction each round.
    pub head_comm_size: usize,
    /// ProG token graph: prompt parameters and extra tokens.
    pub prog_prompt_size: usize,
    pub prog_tokens: usize,
}

impl AccountingConfig {
    /// Defaults behind the published communication table.
    pub fn table7() -> Self {
        AccountingConfig {
            hidden_dim: 100,
            feature_dim: 100,
            n_classes: 7,
            n_source: 200,
            alpha_n: 0.5,
            k_prime: 10,
            head_comm_size: 800,
            prog_prompt_size: 1_000,
            prog_tokens: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    FedAvgGpf,
    FedAvgProg,
    FedGpl,
    FedGplLearnable,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::FedAvgGpf,
        Method::FedAvgProg,
        Method::FedGpl,
        Method::FedGplLearnable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FedAvgGpf => "FedAvg+GPF",
            Method::FedAvgProg => "FedAvg+ProG",
            Method::FedGpl => "FedGPL",
            Method::FedGplLearnable => "FedGPL*",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AccountingRow {
    pub method: Method,
    pub prompt_size: usize,
    pub prompted_graph_size: usize,
    pub comm_cost: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccountingReport {
    pub rows: Vec<AccountingRow>,
    /// Parameters a FedGPL client stores: `p'` plus the head.
    pub fedgpl_client_params: usize,
    /// FedGPL* client: also the candidate features.
    pub fedgpl_learnable_client_params: usize,
    /// GPF client under the same counting model: node prompts plus head.
    pub gpf_client_params: usize,
    /// Per-client footprint of the default baseline setting.
    pub baseline_client_params: usize,
    /// `1 − fedgpl / baseline`.
    pub memory_reduction: f64,
}

fn prompted_nodes(cfg: &AccountingConfig) -> usize {
    (cfg.alpha_n * cfg.n_source as f64).ceil() as usize
}

/// Prompt block size of each method.
pub fn prompt_size(cfg: &AccountingConfig, method: Method) -> usize {
    match method {
        Method::FedAvgGpf => cfg.n_source * cfg.hidden_dim,
        Method::FedAvgProg => cfg.prog_prompt_size,
        Method::FedGpl => cfg.hidden_dim,
        Method::FedGplLearnable => cfg.hidden_dim + cfg.k_prime * cfg.feature_dim,
    }
}

pub fn prompted_graph_size(cfg: &AccountingConfig, method: Method) -> usize {
    let nodes = match method {
        Method::FedAvgGpf => cfg.n_source,
        Method::FedAvgProg => cfg.n_source + cfg.prog_tokens,
        Method::FedGpl | Method::FedGplLearnable => prompted_nodes(cfg),
    };
    nodes * cfg.hidden_dim
}

/// Graph up, embedding down, prompt and head each way.
pub fn comm_cost(cfg: &AccountingConfig, method: Method) -> usize {
    let graph = prompted_graph_size(cfg, method);
    graph + graph + 2 * prompt_size(cfg, method) + 2 * cfg.head_comm_size
}

pub fn param_accounting(cfg: &AccountingConfig) -> AccountingReport {
    comm_accounting(cfg)
}

pub fn comm_accounting(cfg: &AccountingConfig) -> AccountingReport {
    let head = cfg.hidden_dim * cfg.n_classes;
    let rows = Method::ALL
        .iter()
        .map(|&method| AccountingRow {
            method,
            prompt_size: prompt_size(cfg, method),
            prompted_graph_size: prompted_graph_size(cfg, method),
            comm_cost: comm_cost(cfg, method),
        })
        .collect();
    let fedgpl = prompt_size(cfg, Method::FedGpl) + head;
    // the published baseline footprint equals the FedAvg+GPF per-round volume
    let baseline = comm_cost(cfg, Method::FedAvgGpf);
    AccountingReport {
        rows,
        fedgpl_client_params: fedgpl,
        fedgpl_learnable_client_params: prompt_size(cfg, Method::FedGplLearnable) + head,
        gpf_client_params: prompt_size(cfg, Method::FedAvgGpf) + head,
        baseline_client_params: baseline,
        memory_reduction: 1.0 - fedgpl as f64 / baseline as f64,
    }
}

/// Plain-text table, one row per method.
pub fn render(report: &AccountingReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>12} {:>14} {:>12}\n",
        "method", "prompt_size", "prompted_graph", "comm_cost"
    ));
    for r in &report.rows {
        out.push_str(&format!(
            "{:<12} {:>12} {:>14} {:>12}\n",
            r.method.name(),
            group(r.prompt_size),
            group(r.prompted_graph_size),
            group(r.comm_cost)
        ));
    }
    out.push_str(&format!(
        "fedgpl_client_params {}\n",
        group(report.fedgpl_client_params)
    ));
    out.push_str(&format!(
        "fedgpl*_client_params {}\n",
        group(report.fedgpl_learnable_client_params)
    ));
    out.push_str(&format!(
        "baseline_client_params {}\n",
        group(report.baseline_client_params)
    ));
    out.push_str(&format!(
        "memory_reduction {:.2}%\n",
        100.0 * report.memory_reduction
    ));
    out
}

/// `21800` → `21,800`.
pub fn group(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}
