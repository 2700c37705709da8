//! Generates a labelled synthetic corpus, writes it to disk and shows what
//! the preprocessing keeps.
//!
//! cargo run --release --example generate_corpus -- [n_records] [out_dir]

use std::path::PathBuf;

use ctg_ssl::pretrain::segments_from_records;
use ctg_ssl::synth::{generate_corpus, write_corpus, CorpusSpec, DropoutPlan};

fn main() -> ctg_ssl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(40);
    let out = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "corpus_out".into()));

    let spec = CorpusSpec {
        duration: 3600,
        dropout: DropoutPlan::Uniform { lo: 0.0, hi: 0.6 },
        ..CorpusSpec::new(n, 0.5, 42)
    };
    let corpus = generate_corpus(&spec)?;
    write_corpus(&out, &spec, &corpus)?;

    let abnormal = corpus.labels.iter().filter(|l| l.abnormal == 1).count();
    let near = corpus.labels.iter().filter(|l| l.near_delivery == 1).count();
    println!("{n} records -> {}: {abnormal} abnormal, {near} near delivery", out.display());

    let all = segments_from_records(&corpus.records, 1200, false)?;
    let kept = segments_from_records(&corpus.records, 1200, true)?;
    println!("{} 20-minute windows, {} pass the pretraining filter", all.len(), kept.len());

    for (p, l) in corpus.params.iter().zip(&corpus.labels).take(5) {
        println!(
            "  baseline {:5.1} bpm  variability {:4.1}  decel rate {:.2}/min  dropout {:.2}  abnormal {}",
            p.baseline_bpm, p.variability_bpm, p.decel_rate, p.dropout_fraction, l.abnormal
        );
    }
    Ok(())
}
