//! Run configuration: UTF-8 key=value lines with '#' comments. Unknown keys
//! are hard errors so mistyped constants cannot silently fall back to
//! defaults. The same text format is embedded in checkpoints.

use crate::dmon::LossWeights;
use crate::error::{CoreError, Result};
use crate::nn::gnn::ConvKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Supervised,
    Unsupervised,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Supervised => "supervised",
            TrainMode::Unsupervised => "unsupervised",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(TrainMode::Supervised),
            "unsupervised" => Ok(TrainMode::Unsupervised),
            other => Err(CoreError::InvalidParameter {
                name: "mode",
                reason: format!("{other} (expected supervised or unsupervised)"),
            }),
        }
    }
}

/// Every knob of a training run. `0` on the optional architecture fields
/// means "derive from mode and data" (hidden = 128 supervised or half the
/// input dimension unsupervised; layers = 5 supervised, 2 unsupervised;
/// out_dim = hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub k_neighbors: usize,
    pub fanouts: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub k_clusters: usize,
    pub collapse_weight: f64,
    pub ortho_weight: f64,
    pub balance_weight: f64,
    pub supervised_dmon_aux: bool,
    pub seed: u64,
    pub conv_kind: ConvKind,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub dense_dmon: bool,
    pub dense_limit: usize,
    pub distance_eps: f64,
    /// Recorded at training time so checkpoints can rebuild the model.
    pub feature_dim: usize,
}

impl RunConfig {
    pub fn defaults(mode: TrainMode) -> RunConfig {
        RunConfig {
            mode,
            k_neighbors: 50,
            fanouts: vec![30, 30],
            batch_size: 64,
            epochs: match mode {
                TrainMode::Supervised => 5,
                TrainMode::Unsupervised => 100,
            },
            lr: 0.001,
            k_clusters: 10,
            collapse_weight: 0.1,
            ortho_weight: 0.1,
            balance_weight: 0.1,
            supervised_dmon_aux: false,
            seed: 0,
            conv_kind: ConvKind::Gcn,
            hidden_dim: 0,
            num_layers: 0,
            out_dim: 0,
            dropout: 0.3,
            dense_dmon: false,
            dense_limit: 4096,
            distance_eps: 1e-8,
            feature_dim: 0,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            collapse: self.collapse_weight,
            ortho: self.ortho_weight,
            balance: self.balance_weight,
        }
    }

    pub fn resolved_hidden(&self, in_dim: usize) -> usize {
        if self.hidden_dim > 0 {
            self.hidden_dim
        } else {
            match self.mode {
                TrainMode::Supervised => 128,
                TrainMode::Unsupervised => (in_dim / 2).max(1),
            }
        }
    }

    pub fn resolved_layers(&self) -> usize {
        if self.num_layers > 0 {
            self.num_layers
        } else {
            match self.mode {
                TrainMode::Supervised => 5,
                TrainMode::Unsupervised => 2,
            }
        }
    }

    pub fn resolved_out_dim(&self, in_dim: usize) -> usize {
        if self.out_dim > 0 {
            self.out_dim
        } else {
            self.resolved_hidden(in_dim)
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| CoreError::InvalidParameter {
            name: "config",
            reason: format!("key {key}: cannot parse {value:?} as {what}"),
        };
        match key {
            "mode" => self.mode = value.parse()?,
            "k_neighbors" => self.k_neighbors = value.parse().map_err(|_| bad("integer"))?,
            "fanouts" => {
                self.fanouts = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad("comma-separated integers"))?;
                if self.fanouts.is_empty() {
                    return Err(bad("nonempty fanout list"));
                }
            }
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad("integer"))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad("integer"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("real"))?,
            "k_clusters" => self.k_clusters = value.parse().map_err(|_| bad("integer"))?,
            "collapse_weight" => {
                self.collapse_weight = value.parse().map_err(|_| bad("real"))?
            }
            "ortho_weight" => self.ortho_weight = value.parse().map_err(|_| bad("real"))?,
            "balance_weight" => self.balance_weight = value.parse().map_err(|_| bad("real"))?,
            "supervised_dmon_aux" => {
                self.supervised_dmon_aux = value.parse().map_err(|_| bad("bool"))?
            }
            "seed" => self.seed = value.parse().map_err(|_| bad("integer"))?,
            "conv_kind" => self.conv_kind = value.parse()?,
            "hidden_dim" => self.hidden_dim = value.parse().map_err(|_| bad("integer"))?,
            "num_layers" => self.num_layers = value.parse().map_err(|_| bad("integer"))?,
            "out_dim" => self.out_dim = value.parse().map_err(|_| bad("integer"))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad("real"))?,
            "dense_dmon" => self.dense_dmon = value.parse().map_err(|_| bad("bool"))?,
            "dense_limit" => self.dense_limit = value.parse().map_err(|_| bad("integer"))?,
            "distance_eps" => self.distance_eps = value.parse().map_err(|_| bad("real"))?,
            "feature_dim" => self.feature_dim = value.parse().map_err(|_| bad("integer"))?,
            unknown => {
                return Err(CoreError::InvalidParameter {
                    name: "config",
                    reason: format!("unknown key {unknown:?}"),
                })
            }
        }
        Ok(())
    }

    /// Parse key=value text over mode-appropriate defaults. The mode line,
    /// if present, must come first so later keys resolve against it.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut mode = TrainMode::Unsupervised;
        for line in text.lines() {
            let line = strip_comment(line);
            if let Some((k, v)) = split_kv(line)? {
                if k == "mode" {
                    mode = v.parse()?;
                }
            }
        }
        let mut cfg = RunConfig::defaults(mode);
        let mut epochs_set = false;
        for line in text.lines() {
            let line = strip_comment(line);
            if let Some((k, v)) = split_kv(line)? {
                if k == "epochs" {
                    epochs_set = true;
                }
                cfg.set(k, v)?;
            }
        }
        if !epochs_set {
            cfg.epochs = RunConfig::defaults(cfg.mode).epochs;
        }
        Ok(cfg)
    }

    /// Canonical serialization: fixed key order, parseable by [`parse`].
    pub fn to_text(&self) -> String {
        let fan = self
            .fanouts
            .iter()
            .map(|f| f.to_string())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "mode={}\nk_neighbors={}\nfanouts={}\nbatch_size={}\nepochs={}\nlr={}\n\
             k_clusters={}\ncollapse_weight={}\northo_weight={}\nbalance_weight={}\n\
             supervised_dmon_aux={}\nseed={}\nconv_kind={}\nhidden_dim={}\nnum_layers={}\n\
             out_dim={}\ndropout={}\ndense_dmon={}\ndense_limit={}\ndistance_eps={}\n\
             feature_dim={}\n",
            self.mode,
            self.k_neighbors,
            fan,
            self.batch_size,
            self.epochs,
            self.lr,
            self.k_clusters,
            self.collapse_weight,
            self.ortho_weight,
            self.balance_weight,
            self.supervised_dmon_aux,
            self.seed,
            self.conv_kind,
            self.hidden_dim,
            self.num_layers,
            self.out_dim,
            self.dropout,
            self.dense_dmon,
            self.dense_limit,
            self.distance_eps,
            self.feature_dim,
        )
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(p) => &line[..p],
        None => line,
    }
}

fn split_kv(line: &str) -> Result<Option<(&str, &str)>> {
    let line = line.trim();
    if line.is_empty() {
        return Ok(None);
    }
    match line.split_once('=') {
        Some((k, v)) => Ok(Some((k.trim(), v.trim()))),
        None => Err(CoreError::InvalidParameter {
            name: "config",
            reason: format!("line {line:?} is not key=value"),
        }),
    }
}
