use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::container::{read_container, write_container, Container};
use crate::error::{Error, Result};
use crate::graph::Interaction;
use crate::kernels::KernelKind;
use crate::model::ModelParams;
use crate::numerics::Tensor;

use super::{FoldOrder, LayerState, OpenGroup, StreamState};

const MAGIC: &[u8; 4] = b"TAPS";
const KIND: &str = "state";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    num_nodes: usize,
    dim: usize,
    layers: usize,
    kernel: KernelKind,
    directed: bool,
    order: FoldOrder,
    watermark: Option<f64>,
    open_time: Option<f64>,
}

fn column(values: impl Iterator<Item = f64>) -> Tensor {
    Tensor::column(values.collect())
}

fn push_layers(out: &mut Vec<(String, Tensor)>, prefix: &str, layers: &[LayerState]) {
    for (k, l) in layers.iter().enumerate() {
        out.push((format!("{prefix}layer{}.h", k + 1), l.h.clone()));
        out.push((format!("{prefix}layer{}.acc", k + 1), l.acc.clone()));
        if !l.mass.is_empty() {
            out.push((format!("{prefix}layer{}.mass", k + 1), Tensor::column(l.mass.clone())));
        }
    }
}

struct Fields<'a> {
    c: &'a Container,
}

impl Fields<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<&Tensor> {
        let t = self.c.get(name).ok_or_else(|| Error::Format { kind: KIND, msg: format!("missing tensor {name}") })?;
        if t.shape() != shape {
            return Err(Error::Format {
                kind: KIND,
                msg: format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape()),
            });
        }
        Ok(t)
    }

    fn counts(&self, name: &str, rows: usize) -> Result<Vec<usize>> {
        self.get(name, &[rows, 1])?
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(53) {
                    Ok(x as usize)
                } else {
                    Err(Error::Format { kind: KIND, msg: format!("{name} holds {x}, not a count") })
                }
            })
            .collect()
    }

    fn layers(&self, prefix: &str, h: &Header, rows: usize) -> Result<Vec<LayerState>> {
        (1..=h.layers)
            .map(|k| {
                Ok(LayerState {
                    h: self.get(&format!("{prefix}layer{k}.h"), &[rows, h.dim])?.clone(),
                    acc: self.get(&format!("{prefix}layer{k}.acc"), &[rows, h.dim])?.clone(),
                    mass: if h.kernel == KernelKind::Attention {
                        self.get(&format!("{prefix}layer{k}.mass"), &[rows, 1])?.data().to_vec()
                    } else {
                        Vec::new()
                    },
                })
            })
            .collect()
    }
}

impl StreamState {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let cfg = &self.params.config;
        let header = Header {
            num_nodes: cfg.num_nodes,
            dim: cfg.dim,
            layers: cfg.layers,
            kernel: cfg.kernel,
            directed: cfg.directed,
            order: self.order,
            watermark: self.watermark,
            open_time: self.open.as_ref().map(|g| g.time),
        };
        let mut tensors = Vec::new();
        push_layers(&mut tensors, "", &self.layers);
        tensors.push(("cum_degree".into(), column(self.cum_degree.iter().map(|&d| d as f64))));
        tensors.push(("last_time".into(), Tensor::column(self.last_time.clone())));
        if let Some(g) = &self.open {
            let edges = g.edges.iter().flat_map(|e| [e.src as f64, e.dst as f64, e.time]).collect();
            tensors.push(("open.edges".into(), Tensor::matrix(g.edges.len(), 3, edges)?));
            tensors.push(("open.features".into(), Tensor::matrix(g.edges.len(), cfg.edge_dim, g.features.clone())?));
            tensors.push(("open.nodes".into(), column(g.nodes.iter().map(|&v| v as f64))));
            tensors.push(("open.cum_degree".into(), column(g.cum_degree.iter().map(|&d| d as f64))));
            tensors.push(("open.last_time".into(), Tensor::column(g.last_time.clone())));
            push_layers(&mut tensors, "open.", &g.layers);
        }
        let named: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        write_container(w, KIND, MAGIC, &serde_json::to_string(&header)?, &named)
    }

    /// Reads a snapshot taken over `params`.
    pub fn read_from<R: Read>(r: R, params: &ModelParams) -> Result<Self> {
        let c = read_container(r, KIND, MAGIC)?;
        let h: Header = serde_json::from_str(&c.config)?;
        let cfg = &params.config;
        if (h.num_nodes, h.dim, h.layers, h.kernel, h.directed)
            != (cfg.num_nodes, cfg.dim, cfg.layers, cfg.kernel, cfg.directed)
        {
            return Err(Error::Format { kind: KIND, msg: "snapshot was taken over a different model".into() });
        }
        let fields = Fields { c: &c };
        let n = h.num_nodes;
        let cum_degree = fields.counts("cum_degree", n)?;
        let last_time = fields.get("last_time", &[n, 1])?.data().to_vec();
        let open = match h.open_time {
            None => None,
            Some(time) => {
                let rows = c.get("open.edges").map_or(0, Tensor::rows);
                let raw = fields.get("open.edges", &[rows, 3])?;
                let edges = raw
                    .data()
                    .chunks_exact(3)
                    .map(|e| {
                        let node = |x: f64| {
                            (x >= 0.0 && x.fract() == 0.0 && (x as usize) < n).then_some(x as usize).ok_or_else(|| {
                                Error::Format { kind: KIND, msg: format!("open edge references node {x}") }
                            })
                        };
                        Ok(Interaction { src: node(e[0])?, dst: node(e[1])?, time: e[2] })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let features = fields.get("open.features", &[rows, cfg.edge_dim])?.data().to_vec();
                let k = c.get("open.nodes").map_or(0, Tensor::rows);
                let nodes = fields.counts("open.nodes", k)?;
                if nodes.iter().any(|&v| v >= n) {
                    return Err(Error::Format { kind: KIND, msg: "open group references an unknown node".into() });
                }
                Some(OpenGroup {
                    time,
                    edges,
                    features,
                    cum_degree: fields.counts("open.cum_degree", k)?,
                    last_time: fields.get("open.last_time", &[k, 1])?.data().to_vec(),
                    layers: fields.layers("open.", &h, k)?,
                    nodes,
                })
            }
        };
        Ok(StreamState {
            params: Arc::new(params.clone()),
            order: h.order,
            layers: fields.layers("", &h, n)?,
            cum_degree,
            last_time,
            watermark: h.watermark,
            open,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, params: &ModelParams) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?), params)
    }
}
