//! Versioned binary checkpoints for [`ShampooState`].
//!
//! All integers and scalars are little-endian. Layout, version 1:
//!
//! ```text
//! magic            8 bytes  "SHAMPOO\0"
//! version          u16
//! dtype            u8       1 = f32, 2 = f64
//! learning_rate    f64
//! epsilon          f64
//! momentum         f64
//! root_interval    u64
//! diag_threshold   u64
//! placement        u8       0 = gradient, 1 = statistics, 2 = update
//! n_overrides      u32, then n_overrides x u8 (0 = auto, 1 = full, 2 = diagonal)
//! order            u32, then order x u64 extents
//! step             u64
//! roots_step       u64      0 = roots never computed
//! params           prod(extents) scalars
//! momentum         prod(extents) scalars
//! per mode:        u8 variant (1 = full, 2 = diagonal),
//!                  stats then root: n*n scalars (full) or n scalars (diagonal)
//! crc32            u32      IEEE CRC-32 of every preceding byte
//! ```

use super::shampoo::{ModeChoice, ModeStats, MomentumPlacement, ShampooConfig, ShampooState};
use crate::error::{Error, Result};
use crate::psd::SymMatrix;
use crate::scalar::{DType, Scalar};
use crate::tensor::DenseTensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SHAMPOO\0";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Encodes the full optimizer state.
pub fn serialize<T: Scalar>(state: &ShampooState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::DTYPE as u8);

    let c = &state.config;
    out.extend_from_slice(&c.learning_rate.to_le_bytes());
    out.extend_from_slice(&c.epsilon.to_le_bytes());
    out.extend_from_slice(&c.momentum.to_le_bytes());
    out.extend_from_slice(&c.root_update_interval.to_le_bytes());
    out.extend_from_slice(&(c.diag_threshold as u64).to_le_bytes());
    out.push(match c.momentum_placement {
        MomentumPlacement::Gradient => 0,
        MomentumPlacement::Statistics => 1,
        MomentumPlacement::Update => 2,
    });
    out.extend_from_slice(&(c.mode_overrides.len() as u32).to_le_bytes());
    for o in &c.mode_overrides {
        out.push(match o {
            ModeChoice::Auto => 0,
            ModeChoice::Full => 1,
            ModeChoice::Diagonal => 2,
        });
    }

    let shape = state.params.shape();
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &n in shape {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.roots_step.to_le_bytes());

    let put = |xs: &[T], out: &mut Vec<u8>| xs.iter().for_each(|&x| x.write_le(out));
    put(state.params.data(), &mut out);
    put(state.momentum.data(), &mut out);
    for m in &state.modes {
        match m {
            ModeStats::Full { stats, root } => {
                out.push(1);
                put(stats.data(), &mut out);
                put(root.data(), &mut out);
            }
            ModeStats::Diagonal { stats, root } => {
                out.push(2);
                put(stats, &mut out);
                put(root, &mut out);
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("extent overflows usize".into()))
    }

    fn scalars<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(T::BYTES)
            .ok_or_else(|| Error::Checkpoint("buffer size overflow".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect())
    }
}

/// Decodes a checkpoint written by [`serialize`] with the same scalar type.
pub fn deserialize<T: Scalar>(bytes: &[u8]) -> Result<ShampooState<T>> {
    let corrupt = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let (payload, crc) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader {
        buf: payload,
        pos: 8,
    };
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    if crc32fast::hash(payload) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(corrupt(
            "checksum mismatch (truncated or corrupted payload)",
        ));
    }
    let dtype = DType::from_tag(r.u8()?).ok_or_else(|| corrupt("unknown dtype"))?;
    if dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {dtype:?} data, requested {:?}",
            T::DTYPE
        )));
    }

    let learning_rate = r.f64()?;
    let epsilon = r.f64()?;
    let momentum = r.f64()?;
    let root_update_interval = r.u64()?;
    let diag_threshold = r.usize()?;
    let momentum_placement = match r.u8()? {
        0 => MomentumPlacement::Gradient,
        1 => MomentumPlacement::Statistics,
        2 => MomentumPlacement::Update,
        _ => return Err(corrupt("unknown momentum placement")),
    };
    let n_overrides = r.u32()? as usize;
    let mode_overrides = (0..n_overrides)
        .map(|_| match r.u8()? {
            0 => Ok(ModeChoice::Auto),
            1 => Ok(ModeChoice::Full),
            2 => Ok(ModeChoice::Diagonal),
            _ => Err(corrupt("unknown mode override")),
        })
        .collect::<Result<Vec<_>>>()?;
    let config = ShampooConfig {
        learning_rate,
        epsilon,
        momentum,
        root_update_interval,
        diag_threshold,
        mode_overrides,
        momentum_placement,
    };
    config.validate()?;

    let order = r.u32()? as usize;
    let shape = (0..order).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| corrupt("shape overflow"))?;
    let step = r.u64()?;
    let roots_step = r.u64()?;
    if roots_step > step {
        return Err(corrupt("roots computed after the current step"));
    }
    let inconsistent = |e: Error| Error::Checkpoint(format!("shape inconsistency: {e}"));
    let params = DenseTensor::new(shape.clone(), r.scalars(len)?).map_err(inconsistent)?;
    let momentum_buf = DenseTensor::new(shape.clone(), r.scalars(len)?).map_err(inconsistent)?;

    let mut modes = Vec::with_capacity(order);
    for &n in &shape {
        let m = match r.u8()? {
            1 => {
                let sq = n.checked_mul(n).ok_or_else(|| corrupt("shape overflow"))?;
                ModeStats::Full {
                    stats: SymMatrix::new(n, r.scalars(sq)?).map_err(inconsistent)?,
                    root: SymMatrix::new(n, r.scalars(sq)?).map_err(inconsistent)?,
                }
            }
            2 => ModeStats::Diagonal {
                stats: r.scalars(n)?,
                root: r.scalars(n)?,
            },
            _ => return Err(corrupt("unknown mode variant")),
        };
        modes.push(m);
    }
    if r.pos != payload.len() {
        return Err(corrupt("trailing bytes after last mode"));
    }
    if !config.mode_overrides.is_empty() && config.mode_overrides.len() != order {
        return Err(corrupt("mode override count does not match tensor order"));
    }

    Ok(ShampooState {
        params,
        modes,
        momentum: momentum_buf,
        step,
        roots_step,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained(steps: usize) -> ShampooState<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cfg = ShampooConfig::default();
        cfg.momentum = 0.9;
        cfg.root_update_interval = 7;
        cfg.mode_overrides = vec![ModeChoice::Full, ModeChoice::Diagonal, ModeChoice::Auto];
        let mut s = ShampooState::new(&[3, 2, 4], cfg).unwrap();
        for _ in 0..steps {
            let g = DenseTensor::from_fn(&[3, 2, 4], |_| rng.random_range(-1.0..1.0)).unwrap();
            s.step(&g).unwrap();
        }
        s
    }

    fn bits(s: &ShampooState<f64>) -> Vec<u64> {
        let mut v: Vec<u64> = s.params.data().iter().map(|x| x.to_bits()).collect();
        v.extend(s.momentum.data().iter().map(|x| x.to_bits()));
        for m in &s.modes {
            v.extend(m.stats_matrix().data().iter().map(|x| x.to_bits()));
            v.extend(m.root_matrix().data().iter().map(|x| x.to_bits()));
        }
        v
    }

    #[test]
    fn fresh_state_round_trips() {
        let s = ShampooState::<f64>::new(&[2, 5], ShampooConfig::default()).unwrap();
        let back: ShampooState<f64> = deserialize(&serialize(&s)).unwrap();
        assert_eq!(back, s);
        assert_eq!(bits(&back), bits(&s));
    }

    #[test]
    fn trained_state_round_trips_bit_exactly() {
        let s = trained(50);
        let back: ShampooState<f64> = deserialize(&serialize(&s)).unwrap();
        assert_eq!(bits(&back), bits(&s));
        assert_eq!(back.step, 50);
        assert_eq!(back.roots_step, s.roots_step);
        assert_eq!(back.config, s.config);
    }

    #[test]
    fn f32_round_trips() {
        let mut s = ShampooState::<f32>::new(&[2, 2], ShampooConfig::default()).unwrap();
        s.step(&DenseTensor::new(vec![2, 2], vec![1.0, -2.0, 0.5, 3.0]).unwrap())
            .unwrap();
        let back: ShampooState<f32> = deserialize(&serialize(&s)).unwrap();
        assert_eq!(back, s);
        assert!(matches!(
            deserialize::<f64>(&serialize(&s)),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = serialize(&trained(3));
        for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                deserialize::<f64>(&bytes[..cut]),
                Err(Error::Checkpoint(_))
            ));
        }
    }

    #[test]
    fn flipped_byte_is_rejected() {
        let mut bytes = serialize(&trained(3));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            deserialize::<f64>(&bytes),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = serialize(&trained(1));
        bytes[8] = 9;
        let err = deserialize::<f64>(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
