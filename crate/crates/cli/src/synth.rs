use std::fs;
use std::path::{Path, PathBuf};

use hmt_core::data::{generate_synthetic, synthetic_vocab, SyntheticTaskSpec};
use hmt_core::metrics::write_pharaoh;

use crate::error::{io_at, CliResult};

pub struct SynthFiles {
    pub source: PathBuf,
    pub target: PathBuf,
    pub alignments: PathBuf,
}

/// Writes `<prefix>.src`, `<prefix>.tgt` and `<prefix>.align` into `out`.
pub fn run(spec: &SyntheticTaskSpec, count: usize, out: &Path, prefix: &str) -> CliResult<SynthFiles> {
    let pairs = generate_synthetic(spec, count)?;
    let vocab = synthetic_vocab(spec.vocab_size);
    let (mut src, mut tgt, mut align) = (String::new(), String::new(), String::new());
    for p in &pairs {
        src.push_str(&vocab.decode(&p.source));
        src.push('\n');
        tgt.push_str(&vocab.decode(&p.target));
        tgt.push('\n');
        align.push_str(&write_pharaoh(&spec.alignments(p.source.len())));
        align.push('\n');
    }
    io_at(out, fs::create_dir_all(out))?;
    let files = SynthFiles {
        source: out.join(format!("{prefix}.src")),
        target: out.join(format!("{prefix}.tgt")),
        alignments: out.join(format!("{prefix}.align")),
    };
    io_at(&files.source, fs::write(&files.source, src))?;
    io_at(&files.target, fs::write(&files.target, tgt))?;
    io_at(&files.alignments, fs::write(&files.alignments, align))?;
    Ok(files)
}
