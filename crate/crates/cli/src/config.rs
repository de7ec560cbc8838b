use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use tapgnn_core::graph::{read_edge_list, ParseOptions, SplitFractions, TemporalGraph};
use tapgnn_core::kernels::KernelKind;
use tapgnn_core::model::{SamplerKind, TrainConfig};
use tapgnn_core::synthetic::SyntheticSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

pub fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Clone, Debug)]
pub struct UsizeList(pub Vec<usize>);

pub fn usize_list(s: &str) -> Result<UsizeList, String> {
    s.split(',').map(|p| positive(p.trim())).collect::<Result<_, _>>().map(UsizeList)
}

fn fractions(s: &str) -> Result<SplitFractions, String> {
    let v: Vec<f64> =
        s.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    let [train, val, test] = v[..] else {
        return Err("expected three comma-separated fractions".into());
    };
    let f = SplitFractions { train, val, test };
    f.validate().map_err(|e| e.to_string())?;
    Ok(f)
}

fn kernel(s: &str) -> Result<KernelKind, String> {
    s.parse::<KernelKind>().map_err(|e| e.to_string())
}

/// A kernel name, or `all` for every kernel.
#[derive(Clone, Debug)]
pub struct Kernels(pub Vec<KernelKind>);

pub fn kernel_choice(s: &str) -> Result<Kernels, String> {
    if s == "all" {
        Ok(Kernels(KernelKind::ALL.to_vec()))
    } else {
        kernel(s).map(|k| Kernels(vec![k]))
    }
}

fn sampler(s: &str) -> Result<SamplerKind, String> {
    match s {
        "uniform" => Ok(SamplerKind::Uniform),
        "degree" => Ok(SamplerKind::Degree),
        _ => Err(format!("unknown sampler {s:?} (expected uniform or degree)")),
    }
}

/// Where the graph comes from and how it is split.
#[derive(Args, Debug, Default)]
pub struct DataArgs {
    /// Comma-separated edge list with `src,dst,time[,features...]` rows.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Generated graph, e.g. `communities`, `er:n=30,m=300` or `star:k=10`.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, conflicts_with = "undirected")]
    pub directed: bool,
    #[arg(long)]
    pub undirected: bool,
    /// The edge list starts with a header line.
    #[arg(long)]
    pub header: bool,
    /// Number of feature columns per edge.
    #[arg(long)]
    pub features: Option<usize>,
    /// Train, validation and test fractions.
    #[arg(long, value_parser = fractions)]
    pub split: Option<SplitFractions>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON run configuration; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = kernel)]
    pub kernel: Option<KernelKind>,
    #[arg(long, value_parser = positive)]
    pub layers: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub dim: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub time_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Negatives per positive edge.
    #[arg(long, value_parser = positive)]
    pub neg: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_parser = sampler)]
    pub sampler: Option<SamplerKind>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Everything a run depends on. Written as `config.json` next to outputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub directed: bool,
    pub header: bool,
    pub features: Option<usize>,
    pub split: SplitFractions,
    pub train: TrainConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub precision: Precision,
}

impl RunConfig {
    pub fn resolve(d: &DataArgs, t: Option<&TrainArgs>) -> Result<Self> {
        let mut c = match &d.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if d.data.is_some() || d.synthetic.is_some() {
            c.data = d.data.clone();
            c.synthetic = d.synthetic.clone();
        }
        if d.directed {
            c.directed = true;
        }
        if d.undirected {
            c.directed = false;
        }
        c.header |= d.header;
        c.features = d.features.or(c.features);
        c.split = d.split.unwrap_or(c.split);
        c.seed = d.seed.unwrap_or(c.seed);
        if let Some(t) = t {
            let tc = &mut c.train;
            tc.kernel = t.kernel.unwrap_or(tc.kernel);
            tc.layers = t.layers.unwrap_or(tc.layers);
            tc.dim = t.dim.unwrap_or(tc.dim);
            tc.time_dim = t.time_dim.unwrap_or(tc.time_dim);
            tc.lr = t.lr.unwrap_or(tc.lr);
            tc.batch_size = t.batch.unwrap_or(tc.batch_size);
            tc.dropout = t.dropout.unwrap_or(tc.dropout);
            tc.negatives = t.neg.unwrap_or(tc.negatives);
            tc.max_epochs = t.epochs.unwrap_or(tc.max_epochs);
            tc.patience = t.patience.unwrap_or(tc.patience);
            tc.sampler = t.sampler.unwrap_or(tc.sampler);
            c.precision = t.precision.unwrap_or(c.precision);
            if t.out.is_some() {
                c.out = t.out.clone();
            }
        }
        c.train.seed = c.seed;
        c.split.validate()?;
        c.train.validate()?;
        if c.data.is_none() && c.synthetic.is_none() {
            bail!("no graph given; pass --data PATH or --synthetic SPEC");
        }
        Ok(c)
    }

    /// Synthetic graphs are generated from the run seed and carry their own
    /// directedness.
    pub fn load_graph(&self) -> Result<TemporalGraph> {
        let g = if let Some(spec) = &self.synthetic {
            let spec: SyntheticSpec = spec.parse()?;
            spec.generate(self.seed)?
        } else {
            let path = self.data.as_ref().expect("checked in resolve");
            let opts = ParseOptions { directed: self.directed, has_header: self.header, feature_width: self.features };
            read_edge_list(path, &opts).with_context(|| format!("loading {}", path.display()))?
        };
        info!("graph with {} nodes and {} interactions", g.num_nodes(), g.num_interactions());
        Ok(g)
    }
}
