//! Binary checkpoint of a [`PolicyBundle`].
//!
//! All integers are little-endian `u32`, all reals little-endian IEEE-754
//! `f64`. Layout, in order:
//!
//! ```text
//! magic           11 bytes  "RISMAESTRO1"
//! dims            5 × u32   K, U, M, N, L
//! network count   u32       always 4: scheduler, precoder, RIS, critic
//! per network:
//!   activation    u32       0 = linear output, 1 = softmax output
//!   layer count   u32       n
//!   dims          (n+1) × u32  input, hidden..., output
//!   per layer:    out×in f64 weights (row-major), then out f64 biases
//! log-std count   u32       always 2: precoder, RIS
//! per vector:     u32 length, then f64 entries
//! normalizers     u32 count (always 3: o1, o2, RIS); per normalizer
//!                 u32 dim, u32 frozen flag, f64 sample count,
//!                 dim f64 means, dim f64 second moments (sum of squared deviations)
//! last action     u32 flag (0 = none); if 1: u32 codeword,
//!                 u32 length + f64 precoder reals,
//!                 u32 RIS count, then per RIS u32 length + f64 phases
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mappo::env::JointAction;
use crate::mappo::PolicyBundle;
use crate::nn::{Activation, DenseNet, GaussianActor, RunningNorm};
use crate::optimizer::enumerate_schedules;

pub const MAGIC: &[u8; 11] = b"RISMAESTRO1";

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit in u32")))?;
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }

    fn f64s(&mut self, xs: impl IntoIterator<Item = f64>) -> Result<()> {
        for x in xs {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    fn vec(&mut self, xs: &[f64]) -> Result<()> {
        self.u32(xs.len())?;
        self.f64s(xs.iter().copied())
    }

    fn net(&mut self, net: &DenseNet) -> Result<()> {
        self.u32(usize::from(net.output_activation().tag()))?;
        let sizes = net.sizes();
        self.u32(sizes.len() - 1)?;
        for s in sizes {
            self.u32(s)?;
        }
        self.f64s(net.params())
    }

    fn norm(&mut self, n: &RunningNorm) -> Result<()> {
        self.u32(n.dim())?;
        self.u32(usize::from(n.frozen))?;
        self.f64s([n.count as f64])?;
        self.f64s(n.mean.iter().copied())?;
        self.f64s(n.m2.iter().copied())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> Result<usize> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b).map_err(truncated)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        if n > 1 << 24 {
            return Err(Error::Checkpoint(format!("implausible vector length {n}")));
        }
        self.f64s(n)
    }

    fn net(&mut self) -> Result<DenseNet> {
        let act = Activation::from_tag(self.u32()? as u8).ok_or_else(|| Error::Checkpoint("unknown activation tag".into()))?;
        let layers = self.u32()?;
        if layers == 0 || layers > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {layers}")));
        }
        let sizes = (0..=layers).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let mut net = DenseNet::zeros(&sizes, act).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let p = self.f64s(net.num_params())?;
        net.set_params(&p)?;
        Ok(net)
    }

    fn norm(&mut self) -> Result<RunningNorm> {
        let dim = self.u32()?;
        let frozen = self.u32()? != 0;
        let count = self.f64()? as u64;
        let mean = self.f64s(dim)?;
        let m2 = self.f64s(dim)?;
        Ok(RunningNorm { count, mean, m2, frozen })
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_checkpoint<W: Write>(out: W, b: &PolicyBundle) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(MAGIC)?;
    for d in [b.k, b.u, b.m, b.n, b.l] {
        w.u32(d)?;
    }
    w.u32(4)?;
    w.net(&b.scheduler)?;
    w.net(&b.precoder.net)?;
    w.net(&b.ris.net)?;
    w.net(&b.critic)?;
    w.u32(2)?;
    w.vec(&b.precoder.log_std)?;
    w.vec(&b.ris.log_std)?;
    w.u32(3)?;
    w.norm(&b.norm_o1)?;
    w.norm(&b.norm_o2)?;
    w.norm(&b.norm_ris)?;
    match &b.last_action {
        None => w.u32(0)?,
        Some(a) => {
            w.u32(1)?;
            w.u32(a.codeword)?;
            w.vec(&a.precoder)?;
            w.u32(a.phases.len())?;
            for p in &a.phases {
                w.vec(p)?;
            }
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<PolicyBundle> {
    let mut r = Reader(input);
    let mut magic = [0u8; 11];
    r.0.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic (not a RISMAESTRO1 checkpoint)".into()));
    }
    let (k, u, m, n, l) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let expect = |what: &str, got: usize, want: usize| {
        if got == want {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("{what}: expected {want}, found {got}")))
        }
    };
    expect("network count", r.u32()?, 4)?;
    let scheduler = r.net()?;
    let precoder_net = r.net()?;
    let ris_net = r.net()?;
    let critic = r.net()?;
    expect("log-std count", r.u32()?, 2)?;
    let mut precoder = GaussianActor::new(precoder_net);
    precoder.log_std = r.vec()?;
    let mut ris = GaussianActor::new(ris_net);
    ris.log_std = r.vec()?;
    expect("normalizer count", r.u32()?, 3)?;
    let (norm_o1, norm_o2, norm_ris) = (r.norm()?, r.norm()?, r.norm()?);
    let last_action = if r.u32()? == 0 {
        None
    } else {
        let codeword = r.u32()?;
        let pre = r.vec()?;
        let count = r.u32()?;
        let phases = (0..count).map(|_| r.vec()).collect::<Result<Vec<_>>>()?;
        Some(JointAction { codeword, precoder: pre, phases })
    };
    let codebook = enumerate_schedules(k, u).map_err(|e| Error::Checkpoint(e.to_string()))?;
    expect("scheduler input", scheduler.input_dim(), 2 * k * m)?;
    expect("scheduler output", scheduler.output_dim(), codebook.len())?;
    expect("precoder input", precoder.net.input_dim(), 2 * u * u)?;
    expect("precoder output", precoder.net.output_dim(), 2 * m * u)?;
    expect("precoder log-std", precoder.log_std.len(), 2 * m * u)?;
    expect("RIS input", ris.net.input_dim(), 2 * m * u)?;
    expect("RIS output", ris.net.output_dim(), n)?;
    expect("RIS log-std", ris.log_std.len(), n)?;
    expect("critic input", critic.input_dim(), 2 * k * m + 2 * u * u)?;
    expect("o1 normalizer", norm_o1.dim(), 2 * k * m)?;
    expect("o2 normalizer", norm_o2.dim(), 2 * u * u)?;
    expect("RIS normalizer", norm_ris.dim(), 2 * m * u)?;
    Ok(PolicyBundle { k, u, m, n, l, codebook, scheduler, precoder, ris, critic, norm_o1, norm_o2, norm_ris, last_action })
}

pub fn save_checkpoint(path: &Path, b: &PolicyBundle) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(f), b)
}

pub fn load_checkpoint(path: &Path) -> Result<PolicyBundle> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
