//! Labeled binary corpora: synthetic generators, JSON-lines manifests, a
//! loader for user-supplied directories, and the stratified train/val/test split.
//!
//! Synthetic "benign" files are low-entropy and structured; synthetic
//! "ransomware-like" files are a short stub followed by a uniformly random
//! packed payload. They are byte patterns, not executables.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{check_label, Sample, LABEL_BENIGN, LABEL_RANSOMWARE};
use crate::error::{Error, Result};
use crate::imagization::bytes_to_image;

pub const MIN_SYNTH_SIZE: usize = 1024;
pub const DEFAULT_MIN_SIZE: usize = 4 * 1024;
pub const DEFAULT_MAX_SIZE: usize = 256 * 1024;

const BENIGN_DOMAIN: u64 = 0x6265_6e69_676e_0000;
const RANSOM_DOMAIN: u64 = 0x7261_6e73_6f6d_0000;

/// Byte values common in compiled code; the synthetic code section draws from these.
const CODE_ALPHABET: [u8; 64] = [
    0x00, 0x8b, 0x48, 0x89, 0xff, 0xe8, 0x0f, 0x85, 0x74, 0x45, 0x24, 0x4c, 0x83, 0xc4, 0x5d, 0xc3, 0x55, 0x8d, 0x01,
    0x44, 0x75, 0xeb, 0x33, 0xc0, 0x50, 0x08, 0x10, 0x04, 0x20, 0x6a, 0x68, 0x40, 0x02, 0xc7, 0x05, 0x3b, 0x84, 0x39,
    0x03, 0x7d, 0xf8, 0xfc, 0x18, 0xe9, 0x56, 0x57, 0x5e, 0x5f, 0x53, 0x5b, 0x41, 0x49, 0x4d, 0x8a, 0x88, 0xb8, 0x31,
    0x29, 0x2b, 0xd8, 0x0c, 0x14, 0x1c, 0x90,
];

fn check_size(size: usize) -> Result<()> {
    if size < MIN_SYNTH_SIZE {
        return Err(Error::SizeTooSmall(size));
    }
    Ok(())
}

/// Benign-like bytes: repeated 16-byte header stamps, a skewed code-like
/// section over [`CODE_ALPHABET`], and a zero-padded tail.
pub fn synth_benign(seed: u64, size: usize) -> Result<Vec<u8>> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BENIGN_DOMAIN);
    let mut out = Vec::with_capacity(size);

    let mut stamp = [0u8; 16];
    stamp[..2].copy_from_slice(b"MZ");
    for b in &mut stamp[2..] {
        *b = *CODE_ALPHABET[..16].choose(&mut rng).unwrap();
    }
    let header_len = (size / 16).clamp(256, 4096) / 16 * 16;
    while out.len() < header_len {
        out.extend_from_slice(&stamp);
    }

    let tail_len = (size as f64 * rng.gen_range(0.10..0.25)) as usize;
    let code_len = size - header_len - tail_len;
    // Zipf-like weights over a per-file permutation of the alphabet.
    let mut alphabet = CODE_ALPHABET;
    alphabet.shuffle(&mut rng);
    let weights: Vec<f64> = (0..alphabet.len()).map(|r| 1.0 / (r as f64 + 1.0).powf(1.1)).collect();
    let dist = rand::distributions::WeightedIndex::new(&weights).expect("positive weights");
    out.extend((0..code_len).map(|_| alphabet[rng.sample(&dist)]));

    out.resize(size, 0);
    Ok(out)
}

/// Packed-binary-like bytes: a short structured stub, a uniformly random
/// payload covering most of the file, and a small zero overlay.
pub fn synth_ransomlike(seed: u64, size: usize) -> Result<Vec<u8>> {
    check_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ RANSOM_DOMAIN);
    let stub_len = (size / 16).clamp(64, 1024);
    let mut out = Vec::with_capacity(size);
    let mut stamp = *b"MZ\x90\x00UPX0UPX1\x00\x00\x00\x00";
    stamp[12..].copy_from_slice(&rng.gen::<u32>().to_le_bytes());
    while out.len() < stub_len {
        out.extend_from_slice(&stamp);
    }
    out.truncate(stub_len);

    let overlay_len = (size as f64 * rng.gen_range(0.0..0.05)) as usize;
    let payload_len = size - stub_len - overlay_len;
    out.resize(stub_len + payload_len, 0);
    rng.fill(&mut out[stub_len..]);
    out.resize(size, 0);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub label: u8,
    pub size: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            check_label(e.label)?;
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Manifest(format!("duplicate path {}", e.path)));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            base_dir: self.base_dir.clone(),
        }
    }

    /// Writes one JSON object per line. Entry paths are rewritten relative to
    /// the new location when it is not the manifest's own directory.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let parent = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        let same_dir = fs::canonicalize(parent).ok() == fs::canonicalize(&self.base_dir).ok();
        let mut out = fs::File::create(path)?;
        for e in &self.entries {
            let mut e = e.clone();
            if !same_dir && Path::new(&e.path).is_relative() {
                let abs = fs::canonicalize(&self.base_dir)?.join(&e.path);
                e.path = abs.to_string_lossy().into_owned();
            }
            let line = serde_json::to_string(&e).map_err(|err| Error::Manifest(err.to_string()))?;
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(fs::File::open(path)?);
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|err| Error::Manifest(format!("{}:{}: {err}", path.display(), i + 1)))?;
            entries.push(e);
        }
        let base = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        Self::new(entries, base)
    }

    /// Indexes a directory of user-supplied binaries. Each file's label comes
    /// from the name of the nearest enclosing directory that names a class.
    pub fn from_directory(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut files = Vec::new();
        collect_files(root, root, None, &mut files)?;
        files.sort();
        let entries = files
            .par_iter()
            .map(|(rel, label)| {
                let bytes = fs::read(root.join(rel))?;
                Ok(ManifestEntry {
                    path: rel.to_string_lossy().into_owned(),
                    label: *label,
                    size: bytes.len() as u64,
                    sha256: digest(&bytes),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.is_empty() {
            return Err(Error::Manifest(format!(
                "no labeled files under {} (expected benign/ and ransomware/ style subdirectories)",
                root.display()
            )));
        }
        Self::new(entries, root)
    }

    /// Reads every entry and renders it as a `side x side` image.
    pub fn load_samples(&self, side: usize) -> Result<Vec<Sample>> {
        self.entries
            .par_iter()
            .map(|e| {
                let bytes = fs::read(self.resolve(e))?;
                Sample::new(bytes_to_image(&bytes, side)?, e.label)
            })
            .collect()
    }
}

/// Class label implied by a directory name, if any.
pub fn label_for_dir(name: &str) -> Option<u8> {
    match name.to_ascii_lowercase().as_str() {
        "0" | "benign" | "normal" | "goodware" | "clean" => Some(LABEL_BENIGN),
        "1" | "ransomware" | "ransom" | "malicious" | "malware" => Some(LABEL_RANSOMWARE),
        _ => None,
    }
}

fn collect_files(root: &Path, dir: &Path, label: Option<u8>, out: &mut Vec<(PathBuf, u8)>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        let ty = entry.file_type()?;
        if ty.is_dir() {
            let here = entry.file_name().to_str().and_then(label_for_dir).or(label);
            collect_files(root, &path, here, out)?;
        } else if ty.is_file() {
            if let Some(l) = label {
                out.push((path.strip_prefix(root).expect("walk stays under root").to_path_buf(), l));
            }
        }
    }
    Ok(())
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn derive_seed(seed: u64, label: u8, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([label]);
    h.update((index as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeRange {
    pub min: usize,
    pub max: usize,
}

impl Default for SizeRange {
    fn default() -> Self {
        Self {
            min: DEFAULT_MIN_SIZE,
            max: DEFAULT_MAX_SIZE,
        }
    }
}

/// Writes `n_per_class` files of each class under `out_dir` and returns their
/// manifest (benign entries first).
pub fn build_corpus(n_per_class: usize, sizes: SizeRange, seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let out_dir = out_dir.as_ref();
    if n_per_class == 0 {
        return Err(Error::InvalidConfig("at least one sample per class is required".into()));
    }
    check_size(sizes.min)?;
    if sizes.max < sizes.min {
        return Err(Error::InvalidConfig(format!(
            "size range {}..={} is empty",
            sizes.min, sizes.max
        )));
    }
    for dir in ["benign", "ransomware"] {
        fs::create_dir_all(out_dir.join(dir))?;
    }
    let jobs: Vec<(u8, usize)> = [LABEL_BENIGN, LABEL_RANSOMWARE]
        .iter()
        .flat_map(|&l| (0..n_per_class).map(move |i| (l, i)))
        .collect();
    let entries = jobs
        .par_iter()
        .map(|&(label, i)| {
            let file_seed = derive_seed(seed, label, i);
            let size = ChaCha8Rng::seed_from_u64(file_seed).gen_range(sizes.min..=sizes.max);
            let (bytes, rel) = if label == LABEL_BENIGN {
                (synth_benign(file_seed, size)?, format!("benign/benign-{i:05}.bin"))
            } else {
                (
                    synth_ransomlike(file_seed, size)?,
                    format!("ransomware/ransom-{i:05}.bin"),
                )
            };
            fs::write(out_dir.join(&rel), &bytes)?;
            Ok(ManifestEntry {
                path: rel,
                label,
                size: bytes.len() as u64,
                sha256: digest(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Manifest::new(entries, out_dir)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.val, self.test];
        if f.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
            return Err(Error::InvalidSpec(format!("fractions {f:?} must all be positive")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec(format!("fractions {f:?} must sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Largest-remainder apportionment of `total` across `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<(usize, f64)> {
    let sum: usize = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|&w| total as f64 * w as f64 / sum as f64).collect();
    let mut alloc: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let short = total - alloc.iter().sum::<usize>();
    for &c in order.iter().take(short) {
        alloc[c] += 1;
    }
    alloc.into_iter().zip(exact).collect()
}

/// Stratified split. Val and test sizes are `round(fraction * n)`; train takes the rest.
pub fn split(manifest: &Manifest, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let n = manifest.len();
    if n < 10 {
        return Err(Error::TooFewSamples { needed: 10, actual: n });
    }
    let n_val = (spec.val * n as f64).round() as usize;
    let n_test = (spec.test * n as f64).round() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(), Vec::new()];
    for (i, e) in manifest.entries.iter().enumerate() {
        by_class[e.label as usize].push(i);
    }
    for class in &mut by_class {
        class.shuffle(&mut rng);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let val = apportion(n_val, &counts);
    let mut test = apportion(n_test, &counts);
    // Keep the train remainder within one sample of its exact share as well.
    let err0 = (val[0].0 as f64 - val[0].1) + (test[0].0 as f64 - test[0].1);
    if err0 >= 1.0 && test[0].0 > 0 {
        test[0].0 -= 1;
        test[1].0 += 1;
    } else if err0 <= -1.0 && test[1].0 > 0 {
        test[0].0 += 1;
        test[1].0 -= 1;
    }

    let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
    for (c, idx) in by_class.iter().enumerate() {
        let (nv, nt) = (val[c].0, test[c].0);
        if nv + nt > idx.len() {
            return Err(Error::TooFewSamples {
                needed: nv + nt,
                actual: idx.len(),
            });
        }
        va.extend_from_slice(&idx[..nv]);
        te.extend_from_slice(&idx[nv..nv + nt]);
        tr.extend_from_slice(&idx[nv + nt..]);
    }
    let pick = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        manifest.with_entries(idx.into_iter().map(|i| manifest.entries[i].clone()).collect())
    };
    Ok(Splits {
        train: pick(tr),
        val: pick(va),
        test: pick(te),
    })
}

/// `corpus.jsonl` -> `corpus.train.jsonl`, `corpus.val.jsonl`, `corpus.test.jsonl`.
pub fn split_paths(manifest_path: &Path) -> [PathBuf; 3] {
    let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    let ext = manifest_path.extension().and_then(|s| s.to_str()).unwrap_or("jsonl");
    ["train", "val", "test"].map(|part| manifest_path.with_file_name(format!("{stem}.{part}.{ext}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagization::{entropy_profile, shannon_entropy};

    fn fake_manifest(n0: usize, n1: usize) -> Manifest {
        let entries = (0..n0 + n1)
            .map(|i| ManifestEntry {
                path: format!("f{i}"),
                label: u8::from(i >= n0),
                size: 1,
                sha256: String::new(),
            })
            .collect();
        Manifest::new(entries, ".").unwrap()
    }

    #[test]
    fn generators_are_deterministic_and_sized() {
        assert_eq!(synth_benign(3, 5000).unwrap(), synth_benign(3, 5000).unwrap());
        assert_eq!(synth_ransomlike(3, 5000).unwrap(), synth_ransomlike(3, 5000).unwrap());
        assert_ne!(synth_benign(3, 5000).unwrap(), synth_benign(4, 5000).unwrap());
        assert_eq!(synth_benign(1, 1024).unwrap().len(), 1024);
        assert_eq!(synth_ransomlike(1, 1024).unwrap().len(), 1024);
        assert!(matches!(synth_benign(1, 1023), Err(Error::SizeTooSmall(1023))));
        assert!(matches!(synth_ransomlike(1, 10), Err(Error::SizeTooSmall(10))));
    }

    #[test]
    fn generator_entropy_bounds_hold_across_sizes() {
        for seed in 0..20 {
            for size in [1024, 4096, 65_536, 200_000] {
                let b = shannon_entropy(&synth_benign(seed, size).unwrap()).unwrap();
                let r = shannon_entropy(&synth_ransomlike(seed, size).unwrap()).unwrap();
                assert!(b < 6.0, "benign seed {seed} size {size}: {b}");
                assert!(r > 7.0, "ransomlike seed {seed} size {size}: {r}");
            }
        }
    }

    #[test]
    fn packed_payload_dominates_windows() {
        for seed in 0..10 {
            let data = synth_ransomlike(seed, 64 * 1024).unwrap();
            let profile = entropy_profile(&data, 1024).unwrap();
            assert!(profile.fraction_above(7.5) >= 0.7);
        }
    }

    #[test]
    fn split_sizes_and_balance() {
        let s = split(&fake_manifest(3000, 3000), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (4800, 600, 600));
        let s = split(&fake_manifest(300, 300), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (480, 60, 60));
        for m in [&s.train, &s.val, &s.test] {
            assert_eq!(m.count_label(0), m.count_label(1));
        }
    }

    #[test]
    fn split_rejects_bad_specs() {
        let m = fake_manifest(10, 10);
        let zero = SplitSpec {
            train: 1.0,
            val: 0.0,
            test: 0.0,
            seed: 0,
        };
        assert!(matches!(split(&m, &zero), Err(Error::InvalidSpec(_))));
        let off = SplitSpec {
            train: 0.5,
            val: 0.1,
            test: 0.1,
            seed: 0,
        };
        assert!(matches!(split(&m, &off), Err(Error::InvalidSpec(_))));
        assert!(matches!(
            split(&fake_manifest(4, 5), &SplitSpec::default()),
            Err(Error::TooFewSamples { .. })
        ));
    }

    #[test]
    fn split_paths_use_suffixes() {
        let [a, b, c] = split_paths(Path::new("/x/corpus.jsonl"));
        assert_eq!(a, Path::new("/x/corpus.train.jsonl"));
        assert_eq!(b, Path::new("/x/corpus.val.jsonl"));
        assert_eq!(c, Path::new("/x/corpus.test.jsonl"));
    }

    #[test]
    fn directory_labels() {
        assert_eq!(label_for_dir("Benign"), Some(0));
        assert_eq!(label_for_dir("ransomware"), Some(1));
        assert_eq!(label_for_dir("misc"), None);
    }

    #[test]
    fn manifest_rejects_duplicates_and_bad_labels() {
        let e = ManifestEntry {
            path: "a".into(),
            label: 0,
            size: 1,
            sha256: String::new(),
        };
        assert!(Manifest::new(vec![e.clone(), e.clone()], ".").is_err());
        let bad = ManifestEntry { label: 2, ..e };
        assert!(Manifest::new(vec![bad], ".").is_err());
    }
}
