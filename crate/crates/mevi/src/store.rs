//! On-disk formats and bundle persistence.
//!
//! All multi-byte integers are little-endian regardless of host. Four binary
//! formats carry magic + version headers; the manifest is `key=value` text
//! holding shape, metric, and FNV-1a checksums so any corrupted byte is
//! detected at load time. Saves take a directory lock; loads are lock-free
//! and safe to run concurrently.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::embedding::Matrix;
use crate::error::{MeviError, Result};
use crate::index::MeviIndex;
use crate::quantizer::{Code, Codebook, RqCodebook, TreeCodebook};

pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const IDS_FILE: &str = "ids.tsv";
pub const CODEBOOK_FILE: &str = "codebook.bin";
pub const TREE_FILE: &str = "tree.bin";
pub const CODES_FILE: &str = "codes.bin";
pub const INDEX_FILE: &str = "index.bin";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const LOCK_FILE: &str = ".lock";

const EMB_MAGIC: &[u8; 8] = b"MEVIEMB1";
const CBK_MAGIC: &[u8; 8] = b"MEVICBK1";
const COD_MAGIC: &[u8; 8] = b"MEVICOD1";
const IDX_MAGIC: &[u8; 8] = b"MEVIIDX1";
const TRE_MAGIC: &[u8; 8] = b"MEVITRE1";

const FORMAT_VERSION: u32 = 1;

/// Size of the code space, `b^m`, as a decimal string.
pub fn possible_clusters(b: usize, m: usize) -> String {
    (b as u128)
        .checked_pow(m as u32)
        .map(|v| v.to_string())
        .unwrap_or_else(|| "overflow".to_string())
}

/// 64-bit FNV-1a over a byte stream.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    file: &'a str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], file: &'a str) -> Self {
        Self { buf, pos: 0, file }
    }

    fn truncated(&self) -> MeviError {
        MeviError::Truncated {
            file: self.file.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.truncated());
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn expect_magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        let got = self.take(8).map_err(|_| MeviError::MagicMismatch {
            file: self.file.to_string(),
        })?;
        if got != magic {
            return Err(MeviError::MagicMismatch {
                file: self.file.to_string(),
            });
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(MeviError::UnsupportedVersion {
                file: self.file.to_string(),
                version,
            });
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(MeviError::CorruptData {
                file: self.file.to_string(),
                reason: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

fn corrupt(file: &str, reason: impl Into<String>) -> MeviError {
    MeviError::CorruptData {
        file: file.to_string(),
        reason: reason.into(),
    }
}

/// `MEVIEMB1`: u32 version, u32 dim, u64 count, then count*dim f32 values
/// row-major.
pub fn encode_embeddings(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + m.data().len() * 4);
    out.extend_from_slice(EMB_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8], file: &str) -> Result<Matrix> {
    let mut r = Reader::new(bytes, file);
    r.expect_magic(EMB_MAGIC)?;
    r.expect_version()?;
    let dim = r.u32()? as usize;
    let count = r.u64()? as usize;
    if dim == 0 {
        return Err(corrupt(file, "zero dimension"));
    }
    let total = dim
        .checked_mul(count)
        .ok_or_else(|| corrupt(file, "size overflow"))?;
    let mut data = Vec::with_capacity(total);
    let payload = r.take(total * 4)?;
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    r.finish()?;
    Matrix::from_flat(dim, data)
}

/// The embedding payload (float bytes) region, for the corpus checksum.
pub fn embedding_payload(bytes: &[u8]) -> &[u8] {
    &bytes[24.min(bytes.len())..]
}

/// `MEVICBK1`: u32 version, u32 m, u32 b, u32 dim, then m*b*dim f32 values
/// in layer-major, codeword-major order.
pub fn encode_codebook(cb: &RqCodebook) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CBK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cb.m() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.b() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    for t in 0..cb.m() {
        for v in cb.layer(t).data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_codebook(bytes: &[u8], file: &str) -> Result<RqCodebook> {
    let mut r = Reader::new(bytes, file);
    r.expect_magic(CBK_MAGIC)?;
    r.expect_version()?;
    let m = r.u32()? as usize;
    let b = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if m == 0 || b == 0 || dim == 0 {
        return Err(corrupt(file, "zero shape"));
    }
    let mut layers = Vec::with_capacity(m);
    for _ in 0..m {
        let mut data = Vec::with_capacity(b * dim);
        for _ in 0..b * dim {
            data.push(r.f32()?);
        }
        layers.push(Matrix::from_flat(dim, data)?);
    }
    r.finish()?;
    RqCodebook::new(layers).map_err(|_| corrupt(file, "non-finite codeword"))
}

/// `MEVITRE1`: u32 version, u32 m, u32 b, u32 dim, u64 node count, then per
/// node (u32 prefix length, length u16 digits, dim f32 centroid), sorted by
/// (length, digits).
pub fn encode_tree_codebook(cb: &TreeCodebook) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TRE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(cb.m() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.b() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    let count: usize = cb.levels().iter().map(|l| l.len()).sum();
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for level in cb.levels() {
        let mut keys: Vec<&Vec<u16>> = level.keys().collect();
        keys.sort();
        for key in keys {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            for d in key {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &level[key] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_tree_codebook(bytes: &[u8], file: &str) -> Result<TreeCodebook> {
    let mut r = Reader::new(bytes, file);
    r.expect_magic(TRE_MAGIC)?;
    r.expect_version()?;
    let m = r.u32()? as usize;
    let b = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if m == 0 || b == 0 || dim == 0 {
        return Err(corrupt(file, "zero shape"));
    }
    let count = r.u64()? as usize;
    let mut levels: Vec<HashMap<Vec<u16>, Vec<f32>>> = vec![HashMap::new(); m];
    for _ in 0..count {
        let len = r.u32()? as usize;
        if len == 0 || len > m {
            return Err(corrupt(file, format!("node depth {len} out of range")));
        }
        let mut key = Vec::with_capacity(len);
        for _ in 0..len {
            let d = r.u16()?;
            if d as usize >= b {
                return Err(corrupt(file, format!("node digit {d} out of range")));
            }
            key.push(d);
        }
        let mut centroid = Vec::with_capacity(dim);
        for _ in 0..dim {
            centroid.push(r.f32()?);
        }
        if levels[len - 1].insert(key, centroid).is_some() {
            return Err(corrupt(file, "duplicate tree node"));
        }
    }
    r.finish()?;
    Ok(TreeCodebook::new(m, b, dim, levels))
}

pub fn encode_any_codebook(cb: &Codebook) -> Vec<u8> {
    match cb {
        Codebook::Rq(rq) => encode_codebook(rq),
        Codebook::Tree(tree) => encode_tree_codebook(tree),
    }
}

/// `MEVICOD1`: u32 version, u32 m, u64 count, then count*m u16 digits.
pub fn encode_codes(codes: &[Code]) -> Result<Vec<u8>> {
    let m = codes.first().map(|c| c.len()).unwrap_or(0);
    let mut out = Vec::with_capacity(24 + codes.len() * m * 2);
    out.extend_from_slice(COD_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(codes.len() as u64).to_le_bytes());
    for code in codes {
        if code.len() != m {
            return Err(MeviError::CodeLength {
                expected: m,
                got: code.len(),
            });
        }
        for d in code.digits() {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_codes(bytes: &[u8], file: &str) -> Result<Vec<Code>> {
    let mut r = Reader::new(bytes, file);
    r.expect_magic(COD_MAGIC)?;
    r.expect_version()?;
    let m = r.u32()? as usize;
    let count = r.u64()? as usize;
    if m == 0 {
        return Err(corrupt(file, "zero code length"));
    }
    let mut codes = Vec::with_capacity(count);
    for _ in 0..count {
        let mut digits = Vec::with_capacity(m);
        for _ in 0..m {
            digits.push(r.u16()?);
        }
        codes.push(Code::new(digits));
    }
    r.finish()?;
    Ok(codes)
}

/// `MEVIIDX1`: u32 version, u32 m, u64 live count, then per live document
/// (u64 ordinal, m u16 digits). The trie is rebuilt on load.
pub fn encode_cluster_index(live: &[(usize, &Code)], m: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(IDX_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(live.len() as u64).to_le_bytes());
    for (ordinal, code) in live {
        out.extend_from_slice(&(*ordinal as u64).to_le_bytes());
        for d in code.digits() {
            out.extend_from_slice(&d.to_le_bytes());
        }
    }
    out
}

pub fn decode_cluster_index(bytes: &[u8], file: &str) -> Result<(usize, Vec<(usize, Code)>)> {
    let mut r = Reader::new(bytes, file);
    r.expect_magic(IDX_MAGIC)?;
    r.expect_version()?;
    let m = r.u32()? as usize;
    let live_count = r.u64()? as usize;
    if m == 0 {
        return Err(corrupt(file, "zero code length"));
    }
    let mut live = Vec::with_capacity(live_count);
    for _ in 0..live_count {
        let ordinal = r.u64()? as usize;
        let mut digits = Vec::with_capacity(m);
        for _ in 0..m {
            digits.push(r.u16()?);
        }
        live.push((ordinal, Code::new(digits)));
    }
    r.finish()?;
    Ok((m, live))
}

/// Id map: one `<ordinal>\t<external_id>` line per ordinal, in order.
pub fn encode_ids(ids: &[String]) -> Vec<u8> {
    let mut out = String::new();
    for (ordinal, id) in ids.iter().enumerate() {
        out.push_str(&format!("{ordinal}\t{id}\n"));
    }
    out.into_bytes()
}

pub fn decode_ids(bytes: &[u8], file: &str) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt(file, "not utf-8"))?;
    let mut ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let (ordinal, id) = line.split_once('\t').ok_or_else(|| MeviError::ParseError {
            file: file.to_string(),
            line: lineno + 1,
            reason: "expected <ordinal>\\t<id>".to_string(),
        })?;
        let ordinal: usize = ordinal.parse().map_err(|_| MeviError::ParseError {
            file: file.to_string(),
            line: lineno + 1,
            reason: format!("bad ordinal {ordinal:?}"),
        })?;
        if ordinal != lineno {
            return Err(corrupt(file, format!("ordinal {ordinal} out of order")));
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

/// Bundle metadata: `key=value` lines, sorted by key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: std::collections::BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| corrupt(MANIFEST_FILE, format!("missing key {key}")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .parse()
            .map_err(|_| corrupt(MANIFEST_FILE, format!("bad value for {key}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(&format!("{k}={v}\n"));
        }
        out.into_bytes()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let text =
            std::str::from_utf8(bytes).map_err(|_| corrupt(MANIFEST_FILE, "not utf-8"))?;
        let mut entries = std::collections::BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| MeviError::ParseError {
                file: MANIFEST_FILE.to_string(),
                line: lineno + 1,
                reason: "expected key=value".to_string(),
            })?;
            entries.insert(k.to_string(), v.to_string());
        }
        Ok(Self { entries })
    }
}

/// Exclusive directory lock held for the duration of a save or update.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(MeviError::LockHeld(dir.display().to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Writes `bytes` through a temp file in the same directory, then renames
/// into place, so readers never observe partial content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp.{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn creation_timestamp() -> u64 {
    // SOURCE_DATE_EPOCH makes builds byte-reproducible when set.
    if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(secs) = epoch.parse() {
            return secs;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Persists the index into `dir`: embeddings, ids, codebook, codes, live
/// index records, and the manifest with per-file checksums.
pub fn save_bundle(dir: &Path, index: &MeviIndex) -> Result<()> {
    fs::create_dir_all(dir)?;
    let _lock = DirLock::acquire(dir)?;

    let embeddings = encode_embeddings(index.vectors());
    let ids = encode_ids(index.ids());
    let codebook = encode_any_codebook(index.codebook());
    let all_codes: Vec<Code> = (0..index.total_count())
        .map(|o| index.clusters().code_of(o).clone())
        .collect();
    let codes = encode_codes(&all_codes)?;
    let live = index.clusters().live_entries();
    let idx = encode_cluster_index(&live, index.codebook().m());

    let codebook_file = match index.codebook() {
        Codebook::Rq(_) => CODEBOOK_FILE,
        Codebook::Tree(_) => TREE_FILE,
    };

    let mut manifest = Manifest::default();
    manifest.set("m", index.codebook().m());
    manifest.set("b", index.codebook().b());
    manifest.set(
        "possible_clusters",
        possible_clusters(index.codebook().b(), index.codebook().m()),
    );
    manifest.set("dim", index.dim());
    manifest.set("metric", index.metric());
    manifest.set("builder", index.codebook().builder_name());
    manifest.set("count", index.total_count());
    manifest.set("live_count", index.live_count());
    manifest.set("codebook_file", codebook_file);
    manifest.set("version.embeddings", FORMAT_VERSION);
    manifest.set("version.codebook", FORMAT_VERSION);
    manifest.set("version.codes", FORMAT_VERSION);
    manifest.set("version.index", FORMAT_VERSION);
    manifest.set(
        "checksum.corpus",
        format!("{:016x}", fnv1a64(embedding_payload(&embeddings))),
    );
    manifest.set(
        "checksum.embeddings",
        format!("{:016x}", fnv1a64(&embeddings)),
    );
    manifest.set("checksum.codebook", format!("{:016x}", fnv1a64(&codebook)));
    manifest.set("checksum.codes", format!("{:016x}", fnv1a64(&codes)));
    manifest.set("checksum.index", format!("{:016x}", fnv1a64(&idx)));
    manifest.set("created", creation_timestamp());

    write_atomic(&dir.join(EMBEDDINGS_FILE), &embeddings)?;
    write_atomic(&dir.join(IDS_FILE), &ids)?;
    write_atomic(&dir.join(codebook_file), &codebook)?;
    write_atomic(&dir.join(CODES_FILE), &codes)?;
    write_atomic(&dir.join(INDEX_FILE), &idx)?;
    write_atomic(&dir.join(MANIFEST_FILE), &manifest.encode())?;
    Ok(())
}

fn read_file(dir: &Path, name: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(name)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            corrupt(name, "file missing from bundle")
        } else {
            e.into()
        }
    })
}

fn verify_checksum(manifest: &Manifest, key: &str, name: &str, bytes: &[u8]) -> Result<()> {
    let want = manifest.get(key)?;
    let got = format!("{:016x}", fnv1a64(bytes));
    if want != got {
        return Err(MeviError::ChecksumMismatch {
            file: name.to_string(),
        });
    }
    Ok(())
}

/// Loads and fully validates a bundle: magics, versions, checksums, and
/// cross-file shape consistency.
pub fn load_bundle(dir: &Path) -> Result<(MeviIndex, Manifest)> {
    let manifest = Manifest::decode(&read_file(dir, MANIFEST_FILE)?)?;

    let m = manifest.get_u64("m")? as usize;
    let b = manifest.get_u64("b")? as usize;
    let dim = manifest.get_u64("dim")? as usize;
    let count = manifest.get_u64("count")? as usize;
    let live_count = manifest.get_u64("live_count")? as usize;
    let metric: crate::dense::Metric = manifest.get("metric")?.parse()?;
    let codebook_file = manifest.get("codebook_file")?.to_string();

    let emb_bytes = read_file(dir, EMBEDDINGS_FILE)?;
    verify_checksum(&manifest, "checksum.embeddings", EMBEDDINGS_FILE, &emb_bytes)?;
    verify_checksum(
        &manifest,
        "checksum.corpus",
        EMBEDDINGS_FILE,
        embedding_payload(&emb_bytes),
    )?;
    let vectors = decode_embeddings(&emb_bytes, EMBEDDINGS_FILE)?;

    let ids = decode_ids(&read_file(dir, IDS_FILE)?, IDS_FILE)?;

    let cbk_bytes = read_file(dir, &codebook_file)?;
    verify_checksum(&manifest, "checksum.codebook", &codebook_file, &cbk_bytes)?;
    let codebook = match manifest.get("builder")? {
        "rq" => Codebook::Rq(decode_codebook(&cbk_bytes, &codebook_file)?),
        "hkmeans" => Codebook::Tree(decode_tree_codebook(&cbk_bytes, &codebook_file)?),
        other => {
            return Err(corrupt(
                MANIFEST_FILE,
                format!("unknown builder {other:?}"),
            ))
        }
    };

    let cod_bytes = read_file(dir, CODES_FILE)?;
    verify_checksum(&manifest, "checksum.codes", CODES_FILE, &cod_bytes)?;
    let codes = decode_codes(&cod_bytes, CODES_FILE)?;

    let idx_bytes = read_file(dir, INDEX_FILE)?;
    verify_checksum(&manifest, "checksum.index", INDEX_FILE, &idx_bytes)?;
    let (idx_m, live) = decode_cluster_index(&idx_bytes, INDEX_FILE)?;

    // Cross-file consistency.
    if codebook.m() != m || codebook.b() != b || codebook.dim() != dim {
        return Err(corrupt(&codebook_file, "shape disagrees with manifest"));
    }
    if vectors.dim() != dim {
        return Err(corrupt(EMBEDDINGS_FILE, "dimension disagrees with manifest"));
    }
    if vectors.rows() != count || ids.len() != count || codes.len() != count {
        return Err(corrupt(MANIFEST_FILE, "document count disagrees across files"));
    }
    if idx_m != m {
        return Err(corrupt(INDEX_FILE, "code length disagrees with manifest"));
    }
    if live.len() != live_count {
        return Err(corrupt(INDEX_FILE, "live count disagrees with manifest"));
    }
    for code in &codes {
        code.validate(m, b)?;
    }
    for (ordinal, code) in &live {
        if *ordinal >= count {
            return Err(corrupt(INDEX_FILE, format!("ordinal {ordinal} out of range")));
        }
        code.validate(m, b)?;
    }

    let index = MeviIndex::from_parts(vectors, ids, codebook, codes, &live, metric)
        .map_err(|e| match e {
            MeviError::InvalidArgument(reason) => corrupt(INDEX_FILE, reason),
            other => other,
        })?;
    Ok((index, manifest))
}

/// Standalone embedding matrix file (queries, corpus inputs).
pub fn write_embeddings_file(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, &encode_embeddings(m))
}

pub fn read_embeddings_file(path: &Path) -> Result<Matrix> {
    let label = path.display().to_string();
    decode_embeddings(&fs::read(path)?, &label)
}

/// Standalone id list file, parallel to an embedding matrix.
pub fn write_ids_file(path: &Path, ids: &[String]) -> Result<()> {
    write_atomic(path, &encode_ids(ids))
}

pub fn read_ids_file(path: &Path) -> Result<Vec<String>> {
    let label = path.display().to_string();
    decode_ids(&fs::read(path)?, &label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::Metric;
    use crate::index::Builder;
    use crate::quantizer::KmeansParams;
    use crate::test_util::random_embedding_set;

    fn build_index(builder: Builder) -> MeviIndex {
        let x = random_embedding_set(80, 6, 11);
        let (mut index, _) = MeviIndex::build(
            x,
            builder,
            2,
            4,
            &KmeansParams::default(),
            Metric::InnerProduct,
        )
        .unwrap();
        index.remove_document("d7").unwrap();
        index
            .add_document("extra", &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
            .unwrap();
        index
    }

    #[test]
    fn bundle_round_trip_is_bit_exact() {
        for builder in [Builder::Rq, Builder::HierarchicalKmeans] {
            let index = build_index(builder);
            let dir = tempfile::tempdir().unwrap();
            save_bundle(dir.path(), &index).unwrap();
            let (loaded, manifest) = load_bundle(dir.path()).unwrap();

            assert_eq!(loaded.vectors().data(), index.vectors().data());
            assert_eq!(loaded.ids(), index.ids());
            assert_eq!(loaded.codebook(), index.codebook());
            assert_eq!(loaded.live_count(), index.live_count());
            assert_eq!(loaded.metric(), index.metric());
            for o in 0..index.total_count() {
                assert_eq!(loaded.clusters().code_of(o), index.clusters().code_of(o));
                assert_eq!(loaded.is_live(o), index.is_live(o));
            }
            assert_eq!(manifest.get_u64("count").unwrap(), 81);

            // Saving the loaded index reproduces the payload bytes exactly.
            let dir2 = tempfile::tempdir().unwrap();
            save_bundle(dir2.path(), &loaded).unwrap();
            for name in [EMBEDDINGS_FILE, IDS_FILE, CODES_FILE, INDEX_FILE] {
                let a = fs::read(dir.path().join(name)).unwrap();
                let b = fs::read(dir2.path().join(name)).unwrap();
                assert_eq!(a, b, "{name} not byte-identical");
            }
        }
    }

    #[test]
    fn corrupting_any_byte_is_detected() {
        let index = build_index(Builder::Rq);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &index).unwrap();

        let mut rng = {
            use rand::SeedableRng;
            rand_chacha::ChaCha12Rng::seed_from_u64(99)
        };
        use rand::Rng;
        for trial in 0..100 {
            let name = [EMBEDDINGS_FILE, CODEBOOK_FILE, CODES_FILE, INDEX_FILE]
                [trial % 4];
            let path = dir.path().join(name);
            let clean = fs::read(&path).unwrap();
            let mut dirty = clean.clone();
            let pos = rng.random_range(0..dirty.len());
            let flip: u8 = rng.random_range(1..=255);
            dirty[pos] ^= flip;
            fs::write(&path, &dirty).unwrap();

            let err = load_bundle(dir.path()).expect_err("corruption must be detected");
            match err {
                MeviError::ChecksumMismatch { .. }
                | MeviError::MagicMismatch { .. }
                | MeviError::UnsupportedVersion { .. }
                | MeviError::Truncated { .. }
                | MeviError::CorruptData { .. } => {}
                other => panic!("unexpected error kind: {other:?}"),
            }
            fs::write(&path, &clean).unwrap();
        }
        load_bundle(dir.path()).expect("restored bundle loads");
    }

    #[test]
    fn corrupt_embedding_byte_names_the_file() {
        let index = build_index(Builder::Rq);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &index).unwrap();
        let path = dir.path().join(EMBEDDINGS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        fs::write(&path, &bytes).unwrap();
        match load_bundle(dir.path()) {
            Err(MeviError::ChecksumMismatch { file }) => assert_eq!(file, EMBEDDINGS_FILE),
            other => panic!("expected checksum mismatch, got {other:?}"),
        }
    }

    #[test]
    fn future_version_is_rejected() {
        let index = build_index(Builder::Rq);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(dir.path(), &index).unwrap();
        let path = dir.path().join(CODEBOOK_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        // Keep the manifest checksum in agreement so the version check fires.
        let manifest_path = dir.path().join(MANIFEST_FILE);
        let mut manifest = Manifest::decode(&fs::read(&manifest_path).unwrap()).unwrap();
        manifest.set("checksum.codebook", format!("{:016x}", fnv1a64(&bytes)));
        fs::write(&path, &bytes).unwrap();
        fs::write(&manifest_path, manifest.encode()).unwrap();
        match load_bundle(dir.path()) {
            Err(MeviError::UnsupportedVersion { version: 2, .. }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_reported() {
        let bytes = encode_codes(&[Code::new(vec![1, 2])]).unwrap();
        let cut = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode_codes(cut, "codes.bin"),
            Err(MeviError::Truncated { .. })
        ));
    }

    #[test]
    fn wrong_magic_is_reported() {
        let bytes = encode_codes(&[Code::new(vec![1, 2])]).unwrap();
        assert!(matches!(
            decode_embeddings(&bytes, "embeddings.bin"),
            Err(MeviError::MagicMismatch { .. })
        ));
    }

    #[test]
    fn lock_excludes_concurrent_saves() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            DirLock::acquire(dir.path()),
            Err(MeviError::LockHeld(_))
        ));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn ids_file_round_trip_and_validation() {
        let ids = vec!["alpha".to_string(), "beta x".to_string()];
        let bytes = encode_ids(&ids);
        assert_eq!(decode_ids(&bytes, "ids.tsv").unwrap(), ids);
        assert!(decode_ids(b"1\talpha\n", "ids.tsv").is_err());
        assert!(decode_ids(b"0 alpha\n", "ids.tsv").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::default();
        m.set("m", 4);
        m.set("metric", "ip");
        let decoded = Manifest::decode(&m.encode()).unwrap();
        assert_eq!(decoded, m);
        assert_eq!(decoded.get_u64("m").unwrap(), 4);
        assert!(decoded.get("missing").is_err());
    }
}
