//! Binary columnar dump of recorded paths: `b"RMVP"`, a version byte,
//! `n_paths` and `n_steps` as little-endian `u64`, then the
//! `n_paths × (n_steps + 1)` states as little-endian `f64`, path-major.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::engine::PathBatch;

pub const MAGIC: &[u8; 4] = b"RMVP";
pub const VERSION: u8 = 1;

pub fn write_rmvp<W: Write>(mut w: W, batch: &PathBatch) -> Result<()> {
    let paths = batch
        .paths
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("paths were not recorded".into()))?;
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(batch.n_paths() as u64).to_le_bytes())?;
    w.write_all(&(batch.n_steps as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(paths.len() * 8);
    for v in paths {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rmvp {
    pub n_paths: usize,
    pub n_steps: usize,
    pub values: Vec<f64>,
}

pub fn read_rmvp<R: Read>(mut r: R) -> Result<Rmvp> {
    let mut head = [0u8; 21];
    r.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(Error::Io("not an RMVP file".into()));
    }
    if head[4] != VERSION {
        return Err(Error::Io(format!("unsupported RMVP version {}", head[4])));
    }
    let n_paths = u64::from_le_bytes(head[5..13].try_into().unwrap()) as usize;
    let n_steps = u64::from_le_bytes(head[13..21].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected = n_paths * (n_steps + 1) * 8;
    if body.len() != expected {
        return Err(Error::Io(format!("RMVP body has {} bytes, expected {expected}", body.len())));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Rmvp {
        n_paths,
        n_steps,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Criterion, CriterionKind, Scenario, WealthDynamics};
    use crate::simulate::{simulate_paths, ConstantStrategy, SimConfig};
    use nalgebra::DVector;

    #[test]
    fn round_trip_through_a_file() {
        let sc = Scenario::two_asset(0.1, 0.05, 0.2, 0.3, 0.2).unwrap();
        let c = Criterion::new(CriterionKind::TerminalWealth, 1.0, 1.0, 0.0, 1.0).unwrap();
        let mut cfg = SimConfig::new(5, 0.25, 3);
        cfg.record_paths = true;
        let b = simulate_paths(
            WealthDynamics::new(c.kind),
            &ConstantStrategy(DVector::from_vec(vec![0.3, 0.1])),
            &sc,
            &c,
            &cfg,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("paths.rmvp");
        write_rmvp(std::fs::File::create(&p).unwrap(), &b).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"RMVP");
        assert_eq!(bytes.len(), 21 + 5 * 5 * 8);
        let r = read_rmvp(bytes.as_slice()).unwrap();
        assert_eq!((r.n_paths, r.n_steps), (5, 4));
        assert_eq!(&r.values, b.paths.as_ref().unwrap());
        assert!(read_rmvp(&bytes[..30]).is_err());
    }
}
