//! Checksummed torus records and family indices.
//!
//! A record file is a UTF-8 header of `key value` lines, a little-endian
//! `f64` payload and a trailer line with the SHA-256 of everything before it:
//!
//! ```text
//! tori-record 1
//! family <tag>
//! id <n>
//! ...
//! payload <bytes>
//! <payload bytes>
//! sha256 <hex>
//! ```
//!
//! Header scalars are written with 17 significant digits for reading by eye.
//! The payload repeats them bitwise, followed by the observables (if any)
//! and the grid samples of `K_i` and `W_i`, so reading restores every value
//! exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::observables::{BundleDistances, Generator, NaturalFrequencies, ObservableRecord};
use crate::torus_rep::{CurveMap, PeriodicFunction, TorusState};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const RECORD_EXTENSION: &str = "torus";
pub const INDEX_FILE: &str = "index.tsv";
const MAGIC: &str = "tori-record";
const OBS_LEN: usize = 19;

#[derive(Debug, Clone, PartialEq)]
pub struct TorusRecord {
    /// Family tag shared by all records of one continuation run.
    pub family: String,
    pub id: u64,
    pub parent: Option<u64>,
    /// Continuation parameter name, or `seed`/`refine`.
    pub parameter: String,
    pub generator: Generator,
    pub alpha_used: f64,
    pub alpha_next: f64,
    pub calabi_armed: bool,
    pub err: f64,
    pub err_w: f64,
    pub state: TorusState,
    pub observables: Option<ObservableRecord>,
}

impl TorusRecord {
    pub fn file_name(&self) -> String {
        format!("{:06}.{RECORD_EXTENSION}", self.id)
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp.{}", std::process::id()));
    let res = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

fn obs_values(o: &ObservableRecord) -> [f64; OBS_LEN] {
    [
        o.period,
        o.omega,
        o.energy,
        o.unstable_multiplier,
        o.exponent,
        o.calabi[0],
        o.calabi[1],
        o.radii[0],
        o.radii[1],
        o.distances.tangent_field,
        o.distances.stable_unstable,
        o.distances.stable_center,
        o.distances.unstable_center,
        o.frequencies.omega_p,
        o.frequencies.omega_v,
        o.frequencies.nu_p,
        o.frequencies.nu_v,
        o.grid as f64,
        o.legs as f64,
    ]
}

fn obs_from(v: &[f64]) -> ObservableRecord {
    ObservableRecord {
        period: v[0],
        omega: v[1],
        energy: v[2],
        unstable_multiplier: v[3],
        exponent: v[4],
        calabi: [v[5], v[6]],
        radii: [v[7], v[8]],
        distances: BundleDistances {
            tangent_field: v[9],
            stable_unstable: v[10],
            stable_center: v[11],
            unstable_center: v[12],
        },
        frequencies: NaturalFrequencies { omega_p: v[13], omega_v: v[14], nu_p: v[15], nu_v: v[16] },
        grid: v[17] as usize,
        legs: v[18] as usize,
    }
}

const OBS_NAMES: [&str; OBS_LEN] = [
    "T", "omega", "h", "Lu", "chi", "C1", "C2", "r1", "r2", "d_TK_X", "d_Es_Eu", "d_Es_Ec", "d_Eu_Ec", "omega_p",
    "omega_v", "nu_p", "nu_v", "N", "m",
];

fn sci(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serialize a record.
pub fn encode_record(rec: &TorusRecord) -> Result<Vec<u8>> {
    rec.state.validate()?;
    if rec.family.is_empty() || rec.family.chars().any(char::is_whitespace) {
        return Err(Error::InvalidInput("family tag must be a nonempty word".into()));
    }
    let st = &rec.state;
    let scalars = [st.period, st.omega, st.lambda, st.energy, rec.alpha_used, rec.alpha_next, rec.err, rec.err_w];
    let mut payload: Vec<f64> = scalars.to_vec();
    if let Some(o) = &rec.observables {
        payload.extend_from_slice(&obs_values(o));
    }
    for c in st.k.iter().chain(st.w.iter()) {
        for comp in c.comps() {
            payload.extend_from_slice(comp.samples());
        }
    }
    let mut h = String::new();
    let mut line = |k: &str, v: String| h.push_str(&format!("{k} {v}\n"));
    line(MAGIC, SCHEMA_VERSION.to_string());
    line("family", rec.family.clone());
    line("id", rec.id.to_string());
    line("parent", rec.parent.map_or("-".into(), |p| p.to_string()));
    line("parameter", rec.parameter.clone());
    line("generator", rec.generator.name().into());
    line("n", (st.dim() / 2).to_string());
    line("m", st.legs().to_string());
    line("N", st.grid_size().to_string());
    line("T", sci(st.period));
    line("omega", sci(st.omega));
    line("lambda", sci(st.lambda));
    line("h", sci(st.energy));
    line("alpha_used", sci(rec.alpha_used));
    line("alpha_next", sci(rec.alpha_next));
    line("calabi_armed", (rec.calabi_armed as u8).to_string());
    line("err", sci(rec.err));
    line("err_w", sci(rec.err_w));
    line("observables", (rec.observables.is_some() as u8).to_string());
    if let Some(o) = &rec.observables {
        for (name, v) in OBS_NAMES.iter().zip(obs_values(o)) {
            line(&format!("obs.{name}"), sci(v));
        }
    }
    line("payload", (8 * payload.len()).to_string());
    let mut bytes = h.into_bytes();
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let digest = hex::encode(Sha256::digest(&bytes));
    bytes.extend_from_slice(format!("\nsha256 {digest}\n").as_bytes());
    Ok(bytes)
}

pub fn write_record(rec: &TorusRecord, path: &Path) -> Result<()> {
    atomic_write(path, &encode_record(rec)?)
}

struct Header<'a> {
    lines: Vec<(&'a str, &'a str)>,
    what: &'a str,
}

impl<'a> Header<'a> {
    fn get(&self, key: &str) -> Result<&'a str> {
        self.lines
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Format(format!("{}: missing '{key}'", self.what)))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key)?;
        v.parse().map_err(|_| Error::Format(format!("{}: bad value for '{key}': {v}", self.what)))
    }
}

/// Parse a record from bytes; `what` names the source in errors.
pub fn decode_record(bytes: &[u8], what: &str) -> Result<TorusRecord> {
    // Trailer: "\nsha256 <64 hex>\n".
    const TRAILER: usize = 1 + 7 + 64 + 1;
    if bytes.len() < TRAILER || !bytes[bytes.len() - TRAILER..].starts_with(b"\nsha256 ") {
        return Err(Error::Format(format!("{what}: truncated or missing checksum")));
    }
    let body = &bytes[..bytes.len() - TRAILER];
    let stored = std::str::from_utf8(&bytes[bytes.len() - TRAILER + 8..bytes.len() - 1])
        .map_err(|_| Error::Format(format!("{what}: bad checksum line")))?;
    if hex::encode(Sha256::digest(body)) != stored {
        return Err(Error::Checksum(what.into()));
    }
    let marker = b"\npayload ";
    let pos = body
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Format(format!("{what}: no payload line")))?;
    let nl = body[pos + 1..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| pos + 1 + p)
        .ok_or_else(|| Error::Format(format!("{what}: unterminated header")))?;
    let text = std::str::from_utf8(&body[..nl]).map_err(|_| Error::Format(format!("{what}: header is not UTF-8")))?;
    let lines = text
        .lines()
        .map(|l| l.split_once(' ').ok_or_else(|| Error::Format(format!("{what}: bad header line '{l}'"))))
        .collect::<Result<Vec<_>>>()?;
    let h = Header { lines, what };
    let version: u32 = h.parse(MAGIC)?;
    if version != SCHEMA_VERSION {
        return Err(Error::Format(format!("{what}: schema version {version}, expected {SCHEMA_VERSION}")));
    }
    let n: usize = h.parse("n")?;
    let m: usize = h.parse("m")?;
    let grid: usize = h.parse("N")?;
    let has_obs = h.parse::<u8>("observables")? == 1;
    let nbytes: usize = h.parse("payload")?;
    let raw = &body[nl + 1..];
    if raw.len() != nbytes || nbytes % 8 != 0 {
        return Err(Error::Format(format!("{what}: payload is {} bytes, header says {nbytes}", raw.len())));
    }
    let vals: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let n_obs = if has_obs { OBS_LEN } else { 0 };
    let expected = 8 + n_obs + 2 * m * 2 * n * grid;
    if vals.len() != expected || m == 0 || n == 0 {
        return Err(Error::Format(format!("{what}: {} payload values, expected {expected}", vals.len())));
    }
    let head = &vals[..8 + n_obs];
    let mut it = vals[8 + n_obs..].chunks_exact(grid);
    let mut curves = Vec::with_capacity(2 * m);
    for _ in 0..2 * m {
        let comps = (0..2 * n)
            .map(|_| PeriodicFunction::from_samples(it.next().unwrap().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        curves.push(CurveMap::new(comps)?);
    }
    let w = curves.split_off(m);
    let state = TorusState { k: curves, w, period: head[0], omega: head[1], lambda: head[2], energy: head[3] };
    state.validate()?;
    let parent = match h.get("parent")? {
        "-" => None,
        _ => Some(h.parse("parent")?),
    };
    Ok(TorusRecord {
        family: h.get("family")?.to_string(),
        id: h.parse("id")?,
        parent,
        parameter: h.get("parameter")?.to_string(),
        generator: Generator::parse(h.get("generator")?)?,
        alpha_used: head[4],
        alpha_next: head[5],
        calabi_armed: h.parse::<u8>("calabi_armed")? == 1,
        err: head[6],
        err_w: head[7],
        state,
        observables: has_obs.then(|| obs_from(&head[8..])),
    })
}

pub fn read_record(path: &Path) -> Result<TorusRecord> {
    let bytes = fs::read(path)?;
    decode_record(&bytes, &path.display().to_string())
}

/// Record files of a directory, sorted by name.
pub fn record_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x == RECORD_EXTENSION) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// One line of a family index.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: u64,
    pub file: String,
    pub energy: f64,
    pub period: f64,
    pub omega: f64,
    pub unstable_multiplier: f64,
    pub calabi: [f64; 2],
    pub grid: usize,
}

/// Read every record of `dir`, reject mixed families, and order by id.
pub fn family_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let mut family: Option<String> = None;
    let mut out = Vec::new();
    for p in record_paths(dir)? {
        let r = read_record(&p)?;
        match &family {
            None => family = Some(r.family.clone()),
            Some(f) if *f != r.family => {
                return Err(Error::Format(format!(
                    "{}: mixed families '{f}' and '{}' in one directory",
                    dir.display(),
                    r.family
                )))
            }
            _ => {}
        }
        let lu = r.state.lambda.powi(-(r.state.legs() as i32));
        let calabi = r.observables.as_ref().map_or([f64::NAN; 2], |o| o.calabi);
        out.push(IndexEntry {
            id: r.id,
            file: p.file_name().unwrap().to_string_lossy().into_owned(),
            energy: r.state.energy,
            period: r.state.period,
            omega: r.state.omega,
            unstable_multiplier: lu,
            calabi,
            grid: r.state.grid_size(),
        });
    }
    out.sort_by_key(|e| e.id);
    if let Some(w) = out.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(Error::Format(format!("duplicate record id {}", w[0].id)));
    }
    Ok(out)
}

pub fn format_index(entries: &[IndexEntry]) -> String {
    let mut s = String::from("id\tfile\th\tT\tomega\tLu\tC1\tC2\tN\n");
    for e in entries {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.id,
            e.file,
            sci(e.energy),
            sci(e.period),
            sci(e.omega),
            sci(e.unstable_multiplier),
            sci(e.calabi[0]),
            sci(e.calabi[1]),
            e.grid
        ));
    }
    s
}

/// Regenerate `index.tsv` in `dir`.
pub fn write_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let entries = family_index(dir)?;
    atomic_write(&dir.join(INDEX_FILE), format_index(&entries).as_bytes())?;
    Ok(entries)
}

/// Record with the largest id in `dir`, if any.
pub fn last_record(dir: &Path) -> Result<Option<TorusRecord>> {
    let entries = family_index(dir)?;
    match entries.last() {
        Some(e) => Ok(Some(read_record(&dir.join(&e.file))?)),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: u64, family: &str) -> TorusRecord {
        let curve = |s: f64| {
            let pts: Vec<Vec<f64>> = (0..8).map(|j| (0..4).map(|c| s * (j * 4 + c) as f64 / 7.0).collect()).collect();
            CurveMap::from_points(&pts).unwrap()
        };
        TorusRecord {
            family: family.into(),
            id,
            parent: id.checked_sub(1),
            parameter: "T".into(),
            generator: Generator::Vertical,
            alpha_used: 1e-3 / 3.0,
            alpha_next: 0.1,
            calabi_armed: false,
            err: 1e-11,
            err_w: 3e-9,
            state: TorusState {
                k: vec![curve(1.0), curve(-0.3)],
                w: vec![curve(0.1), curve(0.7)],
                period: 2.0 + id as f64 * 0.1,
                omega: 0.1 / 3.0,
                lambda: 0.2,
                energy: -1.5,
            },
            observables: None,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let mut r = record(3, "fam");
        let b = encode_record(&r).unwrap();
        assert_eq!(decode_record(&b, "mem").unwrap(), r);
        let vals: Vec<f64> = (0..OBS_LEN).map(|i| (i as f64 + 0.1) / 3.0).collect();
        let mut o = obs_from(&vals);
        o.grid = 8;
        o.legs = 2;
        r.observables = Some(o);
        let b = encode_record(&r).unwrap();
        assert_eq!(decode_record(&b, "mem").unwrap(), r);
    }

    #[test]
    fn flipped_byte_is_a_checksum_error() {
        let mut b = encode_record(&record(1, "fam")).unwrap();
        let k = b.len() / 2;
        b[k] ^= 0x10;
        assert!(matches!(decode_record(&b, "mem"), Err(Error::Checksum(_))));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let b = encode_record(&record(1, "fam")).unwrap();
        for cut in [1, 10, b.len() / 2] {
            assert!(matches!(decode_record(&b[..b.len() - cut], "mem"), Err(Error::Format(_))));
        }
    }

    #[test]
    fn index_orders_and_rejects_mixed_families() {
        let dir = tempfile::tempdir().unwrap();
        assert!(family_index(dir.path()).unwrap().is_empty());
        for id in [2, 0, 1] {
            let r = record(id, "a");
            write_record(&r, &dir.path().join(r.file_name())).unwrap();
        }
        let idx = write_index(dir.path()).unwrap();
        assert_eq!(idx.iter().map(|e| e.id).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert!(idx.windows(2).all(|w| w[0].period < w[1].period));
        let first = fs::read(dir.path().join(INDEX_FILE)).unwrap();
        write_index(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(INDEX_FILE)).unwrap(), first);
        let r = record(7, "b");
        write_record(&r, &dir.path().join(r.file_name())).unwrap();
        assert!(family_index(dir.path()).is_err());
    }
}
