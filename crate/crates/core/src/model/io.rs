use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::container::{read_container, write_container};
use crate::error::Result;
use crate::numerics::Scalar;

use super::{ModelConfig, ModelParams};

const MAGIC: &[u8; 4] = b"TAPG";
const KIND: &str = "model";

impl<T: Scalar> ModelParams<T> {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let config = serde_json::to_string(&self.config)?;
        let named: Vec<(String, &_)> = self.names.iter().cloned().zip(self.tensors.iter()).collect();
        write_container(w, KIND, MAGIC, &config, &named)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let c = read_container(r, KIND, MAGIC)?;
        let config: ModelConfig = serde_json::from_str(&c.config)?;
        let tensors = c.tensors.into_iter().map(|(n, t)| (n, t.cast())).collect();
        Self::from_tensors(config, tensors)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
