//! Seeded synthetic temporal graphs, addressable by a short spec string such
//! as `er:n=30,m=300`, `communities:n=150,m=2000,partners=1` or `star:k=10`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Interaction, TemporalGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SyntheticSpec {
    /// `m` uniformly random edges over `n` nodes, integer timestamps in
    /// `0..max(1, m/2)` so that ties occur.
    Er { n: usize, m: usize, directed: bool },
    /// Two equal communities, each laid out on a shuffled ring. A node's
    /// partners are its ring neighbours up to `partners` steps away on either
    /// side; interactions are uniform draws from the partner pairs.
    Communities { n: usize, m: usize, partners: usize },
    /// `k` leaves each send one message to node 0, at times `1..=k`.
    Star { k: usize },
}

impl SyntheticSpec {
    pub fn generate(&self, seed: u64) -> Result<TemporalGraph> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            SyntheticSpec::Er { n, m, directed } => {
                if n < 2 {
                    return Err(Error::Config("er needs n >= 2".into()));
                }
                let span = (m / 2).max(1);
                let inter = (0..m)
                    .map(|_| {
                        let src = rng.random_range(0..n);
                        let dst = (src + rng.random_range(1..n)) % n;
                        Interaction { src, dst, time: rng.random_range(0..span) as f64 }
                    })
                    .collect();
                TemporalGraph::from_interactions(n, inter, directed)
            }
            SyntheticSpec::Communities { n, m, partners } => {
                if n < 4 || partners == 0 || partners >= n / 2 {
                    return Err(Error::Config("communities needs n >= 4 and 0 < partners < n/2".into()));
                }
                let half = n / 2;
                let mut pairs = Vec::new();
                for (lo, hi) in [(0, half), (half, n)] {
                    // partners are the next `partners` nodes on a shuffled
                    // ring of the community
                    let mut ring: Vec<usize> = (lo..hi).collect();
                    ring.shuffle(&mut rng);
                    let len = ring.len();
                    for i in 0..len {
                        for j in 1..=partners.min(len / 2) {
                            let (a, b) = (ring[i], ring[(i + j) % len]);
                            pairs.push((a.min(b), a.max(b)));
                        }
                    }
                }
                pairs.sort_unstable();
                pairs.dedup();
                let inter = (0..m)
                    .map(|i| {
                        let (a, b) = pairs[rng.random_range(0..pairs.len())];
                        let (src, dst) = if rng.random::<bool>() { (a, b) } else { (b, a) };
                        Interaction { src, dst, time: i as f64 }
                    })
                    .collect();
                TemporalGraph::from_interactions(n, inter, false)
            }
            SyntheticSpec::Star { k } => {
                let inter = (1..=k).map(|i| Interaction { src: i, dst: 0, time: i as f64 }).collect();
                TemporalGraph::from_interactions(k + 1, inter, true)
            }
        }
    }

    /// Community of a node in a `Communities` graph.
    pub fn community(&self, v: usize) -> Option<usize> {
        match *self {
            SyntheticSpec::Communities { n, .. } => Some(usize::from(v >= n / 2)),
            _ => None,
        }
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = BTreeMap::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in {s:?}, got {part:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |key: &str, default: Option<usize>| -> Result<usize> {
            match kv.remove(key) {
                Some(v) => {
                    v.parse().map_err(|_| Error::Config(format!("{key} must be a non-negative integer, got {v:?}")))
                }
                None => default.ok_or_else(|| Error::Config(format!("synthetic spec {s:?} lacks {key}"))),
            }
        };
        let spec = match kind {
            "er" => {
                let n = take("n", None)?;
                let m = take("m", None)?;
                let directed = take("directed", Some(0))? != 0;
                SyntheticSpec::Er { n, m, directed }
            }
            "communities" => SyntheticSpec::Communities {
                n: take("n", Some(150))?,
                m: take("m", Some(2000))?,
                partners: take("partners", Some(1))?,
            },
            "star" => SyntheticSpec::Star { k: take("k", None)? },
            other => return Err(Error::Config(format!("unknown synthetic graph kind {other:?}"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key {k:?} in synthetic spec {s:?}")));
        }
        Ok(spec)
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyntheticSpec::Er { n, m, directed } => write!(f, "er:n={n},m={m},directed={}", u8::from(*directed)),
            SyntheticSpec::Communities { n, m, partners } => write!(f, "communities:n={n},m={m},partners={partners}"),
            SyntheticSpec::Star { k } => write!(f, "star:k={k}"),
        }
    }
}
