//! Recorded trajectory files for start-state evaluation protocols.
//!
//! On disk (integers little-endian):
//!
//! ```text
//! magic    4 bytes "GRLT"
//! version  u32     currently 1
//! name_len u32, env name bytes (utf-8)
//! seed     u64     reset seed the recording ran under
//! k        u32     observation-stack window used by the recording agent
//! n        u64     record count
//! n x record: action u32, reward f64, terminal u8
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EnvError, Environment};

pub const TRAJECTORY_MAGIC: [u8; 4] = *b"GRLT";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryStep {
    pub action: u32,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub env_name: String,
    pub seed: u64,
    pub stack_k: u32,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Play a policy from `reset(seed)` and record what happened.
pub fn record_trajectory(
    env: &mut dyn Environment,
    seed: u64,
    stack_k: u32,
    step_cap: usize,
    mut policy: impl FnMut(&[f64]) -> usize,
) -> Result<Trajectory, EnvError> {
    let mut obs = env.reset(seed);
    let mut steps = Vec::new();
    for _ in 0..step_cap {
        let action = policy(&obs);
        let r = env.step(action)?;
        steps.push(TrajectoryStep {
            action: action as u32,
            reward: r.reward,
            terminal: r.terminal,
        });
        if r.terminal {
            break;
        }
        obs = r.observation;
    }
    Ok(Trajectory {
        env_name: env.name().to_string(),
        seed,
        stack_k,
        steps,
    })
}

pub fn write_trajectory<W: Write>(w: &mut W, t: &Trajectory) -> Result<(), EnvError> {
    w.write_all(&TRAJECTORY_MAGIC)?;
    w.write_all(&TRAJECTORY_VERSION.to_le_bytes())?;
    w.write_all(&(t.env_name.len() as u32).to_le_bytes())?;
    w.write_all(t.env_name.as_bytes())?;
    w.write_all(&t.seed.to_le_bytes())?;
    w.write_all(&t.stack_k.to_le_bytes())?;
    w.write_all(&(t.steps.len() as u64).to_le_bytes())?;
    for s in &t.steps {
        w.write_all(&s.action.to_le_bytes())?;
        w.write_all(&s.reward.to_le_bytes())?;
        w.write_all(&[s.terminal as u8])?;
    }
    Ok(())
}

pub fn read_trajectory<R: Read>(r: &mut R) -> Result<Trajectory, EnvError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != TRAJECTORY_MAGIC {
        return Err(EnvError::BadTrajectory(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != TRAJECTORY_VERSION {
        return Err(EnvError::BadTrajectory(format!("unsupported version {version}")));
    }
    let name_len = read_u32(r)? as usize;
    if name_len > 4096 {
        return Err(EnvError::BadTrajectory("oversized env name".into()));
    }
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)?;
    let env_name = String::from_utf8(name)
        .map_err(|_| EnvError::BadTrajectory("env name is not utf-8".into()))?;
    let seed = read_u64(r)?;
    let stack_k = read_u32(r)?;
    let n = read_u64(r)? as usize;
    if n > 100_000_000 {
        return Err(EnvError::BadTrajectory(format!("{n} records")));
    }
    let mut steps = Vec::with_capacity(n);
    for _ in 0..n {
        let action = read_u32(r)?;
        let mut reward = [0u8; 8];
        r.read_exact(&mut reward)?;
        let mut terminal = [0u8; 1];
        r.read_exact(&mut terminal)?;
        steps.push(TrajectoryStep {
            action,
            reward: f64::from_le_bytes(reward),
            terminal: terminal[0] != 0,
        });
    }
    Ok(Trajectory {
        env_name,
        seed,
        stack_k,
        steps,
    })
}

pub fn save_trajectory(path: &Path, t: &Trajectory) -> Result<(), EnvError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectory(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, EnvError> {
    let mut r = BufReader::new(File::open(path)?);
    read_trajectory(&mut r)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, EnvError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, EnvError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
