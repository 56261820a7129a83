//! Ancestral reverse sampling driven by a shared noise bank.

use std::io::{BufRead, BufReader, Read, Write};

use super::denoiser::DenoiserNet;
use super::schedule::{posterior_mean_into, NoiseSchedule};
use crate::{rng, Error, Result};

/// Precomputed Gaussian draws of shape `(chains, T + 1, dim)`.
///
/// Slot 0 of each chain is the initial `x_T`; slot `T - s + 1` is the noise
/// added when stepping from `x_s` to `x_{s-1}` (slot `T` is never used, since
/// the last step returns the mean). Two samplers reading the same bank see
/// identical noise realizations.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    chains: usize,
    steps: usize,
    dim: usize,
    seed: u64,
    data: Vec<f64>,
}

const BANK_MAGIC: &str = "guideflow-noisebank";

impl NoiseBank {
    pub fn new(chains: usize, steps: usize, dim: usize, seed: u64) -> Self {
        let per_chain = (steps + 1) * dim;
        let mut data = vec![0.0; chains * per_chain];
        crate::exec::for_each_mut(&mut data.chunks_mut(per_chain.max(1)).collect::<Vec<_>>(), |c, chunk| {
            let mut r = rng::stream(seed, "noise-bank", c as u64);
            rng::fill_normal(&mut r, chunk);
        });
        Self {
            chains,
            steps,
            dim,
            seed,
            data,
        }
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn slot(&self, chain: usize, slot: usize) -> &[f64] {
        let start = (chain * (self.steps + 1) + slot) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn initial(&self, chain: usize) -> &[f64] {
        self.slot(chain, 0)
    }

    /// Noise injected on the step that leaves `x_s`.
    pub fn step_noise(&self, chain: usize, s: usize) -> &[f64] {
        self.slot(chain, self.steps - s + 1)
    }

    pub fn check_fits(&self, chains: usize, steps: usize, dim: usize) -> Result<()> {
        if self.chains < chains || self.steps != steps || self.dim != dim {
            return Err(Error::config(format!(
                "noise bank ({} chains, T={}, dim {}) cannot serve {chains} chains with T={steps}, dim {dim}",
                self.chains, self.steps, self.dim
            )));
        }
        Ok(())
    }

    /// Copy of chains `start..start + count`, renumbered from 0.
    pub fn select(&self, start: usize, count: usize) -> Result<NoiseBank> {
        if start + count > self.chains {
            return Err(Error::config(format!(
                "chains {start}..{} out of range for a bank of {}",
                start + count,
                self.chains
            )));
        }
        let per_chain = (self.steps + 1) * self.dim;
        Ok(Self {
            chains: count,
            steps: self.steps,
            dim: self.dim,
            seed: self.seed,
            data: self.data[start * per_chain..(start + count) * per_chain].to_vec(),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{BANK_MAGIC} 1")?;
        writeln!(w, "chains={}\nsteps={}\ndim={}\nseed={}\nend", self.chains, self.steps, self.dim, self.seed)?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim() != format!("{BANK_MAGIC} 1") {
            return Err(Error::data("not a noise bank file"));
        }
        let mut vals = [0u64; 4];
        for (slot, key) in vals.iter_mut().zip(["chains", "steps", "dim", "seed"]) {
            line.clear();
            r.read_line(&mut line)?;
            *slot = line
                .trim()
                .strip_prefix(&format!("{key}="))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::data(format!("noise bank header missing '{key}'")))?;
        }
        line.clear();
        r.read_line(&mut line)?;
        if line.trim() != "end" {
            return Err(Error::data("noise bank header not terminated"));
        }
        let [chains, steps, dim, seed] = vals;
        let n = (chains * (steps + 1) * dim) as usize;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::data("noise bank truncated"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            chains: chains as usize,
            steps: steps as usize,
            dim: dim as usize,
            seed,
            data,
        })
    }
}

/// States of one reverse chain, `x_T` first and `x_0` last.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub chain_id: usize,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Diffusion step of state `i`.
    pub fn step_of(&self, i: usize) -> usize {
        self.states.len() - 1 - i
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }
}

/// Write trajectories as `chain_id,t,x0[,x1,...]` rows, one per recorded state.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], w: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(w);
    let dim = trajectories
        .first()
        .and_then(|t| t.states.first())
        .map_or(0, Vec::len);
    let cols: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    writeln!(w, "chain_id,t,{}", cols.join(","))?;
    for tr in trajectories {
        for (i, x) in tr.states.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::data("trajectories of mixed dimension"));
            }
            write!(w, "{},{}", tr.chain_id, tr.step_of(i))?;
            for v in x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_trajectories_csv`]. Rows of one chain must be contiguous
/// and in decreasing `t`.
pub fn read_trajectories_csv<R: Read>(r: R) -> Result<Vec<Trajectory>> {
    let mut lines = BufReader::new(r).lines();
    let header = lines.next().ok_or_else(|| Error::data("empty trajectory file"))??;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "chain_id" || cols[1] != "t" {
        return Err(Error::data(format!("unexpected trajectory header '{header}'")));
    }
    let dim = cols.len() - 2;
    let mut out: Vec<Trajectory> = Vec::new();
    let mut last_t = 0usize;
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::data(format!("malformed trajectory row {}: '{line}'", n + 2));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(bad());
        }
        let chain: usize = fields[0].parse().map_err(|_| bad())?;
        let t: usize = fields[1].parse().map_err(|_| bad())?;
        let x = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        match out.last_mut() {
            Some(tr) if tr.chain_id == chain => {
                if t + 1 != last_t {
                    return Err(bad());
                }
                tr.states.push(x);
            }
            _ => out.push(Trajectory {
                chain_id: chain,
                states: vec![x],
            }),
        }
        last_t = t;
    }
    if out.iter().any(|tr| tr.step_of(tr.states.len() - 1) != 0 || last_t != 0) {
        return Err(Error::data("trajectory does not end at t = 0"));
    }
    Ok(out)
}

/// Run one reverse chain from `bank` chain `chain`.
///
/// `eps(x_s, s, out)` writes the (possibly guided) noise prediction at step
/// `s`. Each step moves to `mu + sqrt(beta_s) z`, except the last which
/// returns `mu`.
pub fn reverse_chain<E>(
    schedule: &NoiseSchedule,
    bank: &NoiseBank,
    chain: usize,
    mut eps: E,
    record: bool,
) -> (Vec<f64>, Option<Trajectory>)
where
    E: FnMut(&[f64], usize, &mut [f64]),
{
    let t_max = schedule.steps();
    let mut x = bank.initial(chain).to_vec();
    let mut e = vec![0.0; x.len()];
    let mut mu = vec![0.0; x.len()];
    let mut states = record.then(|| {
        let mut v = Vec::with_capacity(t_max + 1);
        v.push(x.clone());
        v
    });
    for s in (1..=t_max).rev() {
        eps(&x, s, &mut e);
        posterior_mean_into(schedule, &x, s, &e, &mut mu);
        if s > 1 {
            let sigma = schedule.beta(s).sqrt();
            for ((xi, m), z) in x.iter_mut().zip(&mu).zip(bank.step_noise(chain, s)) {
                *xi = m + sigma * z;
            }
        } else {
            x.copy_from_slice(&mu);
        }
        if let Some(st) = states.as_mut() {
            st.push(x.clone());
        }
    }
    let traj = states.map(|states| Trajectory { chain_id: chain, states });
    (x, traj)
}

/// Single ancestral sample. `class` is `None` for unconditional sampling
/// (for a classifier-free net this selects the null class).
pub fn ddpm_sample(
    den: &DenoiserNet,
    class: Option<usize>,
    seed: u64,
    record_trajectory: bool,
) -> Result<(Vec<f64>, Option<Trajectory>)> {
    let input = den.class_input(class)?;
    let bank = NoiseBank::new(1, den.schedule.steps(), den.dim(), seed);
    let mut s = den.net.scratch();
    Ok(reverse_chain(
        &den.schedule,
        &bank,
        0,
        |x, t, out| out.copy_from_slice(den.eps_with(&mut s, x, t, input)),
        record_trajectory,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trajectory_csv_round_trip() {
        let trs = vec![
            Trajectory { chain_id: 0, states: vec![vec![0.5, 1.0], vec![0.1 + 0.2, -2.0], vec![3.0, 4.0]] },
            Trajectory { chain_id: 7, states: vec![vec![1e-300, 0.0], vec![-1.5, 2.5], vec![9.0, 8.0]] },
        ];
        let mut buf = Vec::new();
        write_trajectories_csv(&trs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("chain_id,t,x0,x1\n0,2,0.5,1\n"));
        assert_eq!(read_trajectories_csv(&buf[..]).unwrap(), trs);
        assert!(read_trajectories_csv(&b"chain_id,t,x0\n0,2,1.0\n0,0,1.0\n"[..]).is_err());
        assert!(read_trajectories_csv(&b"chain_id,t,x0\n0,1,1.0\n"[..]).is_err());
    }
    use crate::diffusion::DenoiserKind;
    use crate::nn::Architecture;

    #[test]
    fn bank_round_trip_and_layout() {
        let bank = NoiseBank::new(3, 5, 2, 9);
        let mut buf = Vec::new();
        bank.write_to(&mut buf).unwrap();
        assert_eq!(NoiseBank::read_from(&buf[..]).unwrap(), bank);
        assert_eq!(bank.step_noise(1, 5), bank.slot(1, 1));
        assert_eq!(bank.step_noise(1, 2), bank.slot(1, 4));
        // chains are keyed individually: a bigger bank extends a smaller one
        let big = NoiseBank::new(5, 5, 2, 9);
        assert_eq!(big.slot(2, 3), bank.slot(2, 3));
        assert!(bank.check_fits(4, 5, 2).is_err());
        assert!(NoiseBank::read_from(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn zero_net_trajectory_shape_and_determinism() {
        let sched = NoiseSchedule::scaled_linear(40).unwrap();
        let mut den = DenoiserNet::new(
            DenoiserKind::Conditional,
            1,
            2,
            &Architecture::small(8, 1, 4),
            sched,
            0.0,
            0,
        )
        .unwrap();
        den.net.params.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let (x0, traj) = ddpm_sample(&den, Some(0), 7, true).unwrap();
        let traj = traj.unwrap();
        assert_eq!(traj.states.len(), 41);
        assert_eq!(traj.final_state(), &x0[..]);
        assert_eq!(traj.states[0], NoiseBank::new(1, 40, 1, 7).initial(0));
        assert_eq!(traj.step_of(0), 40);
        assert_eq!(ddpm_sample(&den, Some(0), 7, false).unwrap().0, x0);
        assert!(ddpm_sample(&den, None, 7, false).is_err());
    }
}
