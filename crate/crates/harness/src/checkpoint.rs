//! Training-state checkpoints: one line of JSON header, then the raw values
//! as little-endian `f64`: θ, then the first and second Adam moments.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context};
use deep2bsde_core::solver::TrainState;
use deep2bsde_core::{Architecture, ParamVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub spec: Architecture,
    pub seed: u64,
    pub step: u64,
    /// Entries of θ; the file holds `3 * len` values.
    pub len: usize,
}

pub fn save(path: &Path, arch: &Architecture, state: &TrainState) -> anyhow::Result<()> {
    let header = Header { spec: *arch, seed: state.seed, step: state.step, len: state.theta.len() };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    for block in [state.theta.values(), &state.first_moment, &state.second_moment] {
        for v in block {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> anyhow::Result<(Architecture, TrainState)> {
    let mut r = BufReader::new(std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end()).context("checkpoint header")?;
    let layout = header.spec.layout()?;
    ensure!(layout.len() == header.len, "checkpoint holds {} parameters, {:?} needs {}", header.len, header.spec, layout.len());
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != 3 * header.len * 8 {
        bail!("checkpoint body has {} bytes, expected {}", bytes.len(), 3 * header.len * 8);
    }
    let mut values = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let theta = ParamVector::from_values(layout.params().clone(), take(header.len))?;
    let (first_moment, second_moment) = (take(header.len), take(header.len));
    Ok((header.spec, TrainState { theta, first_moment, second_moment, step: header.step, seed: header.seed }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use deep2bsde_core::CnnSpec;

    #[test]
    fn round_trip_is_exact() {
        let arch = Architecture::Cnn(CnnSpec { dim: 4, channels: 2 });
        let mut state = TrainState::new(arch.init_params(3).unwrap(), 17);
        state.step = 42;
        state.first_moment.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        state.second_moment[0] = f64::MIN_POSITIVE;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save(&path, &arch, &state).unwrap();
        let (arch2, state2) = load(&path).unwrap();
        assert_eq!(arch2, arch);
        assert_eq!(state2, state);
    }

    #[test]
    fn truncated_body_is_rejected() {
        let arch = Architecture::Cnn(CnnSpec { dim: 1, channels: 1 });
        let state = TrainState::new(arch.init_params(0).unwrap(), 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save(&path, &arch, &state).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load(&path).is_err());
    }
}
