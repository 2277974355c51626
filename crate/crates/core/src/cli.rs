//! The `morphnmt` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::embeddings::{init_morph_table_from_map, load_embeddings_tsv, pretrain, set_morph_table};
use crate::error::{Error, Result};
use crate::eval::{bleu, export_attention, paired_bootstrap};
use crate::experiment::compare_variants;
use crate::model::{load_checkpoint, save_checkpoint, Model, Variant};
use crate::morphology::{
    boundary_recall, extract_affixes, load_segmentations, save_segmentations, segment_corpus, AffixInventory,
    LabelSet, MdlConfig,
};
use crate::pipeline::{
    target_word_counts, Prepared, AFFIXES_FILE, BPE_FILE, CHAR_VOCAB_FILE, LABELS_FILE, SEGMENTATIONS_FILE,
    SOURCE_VOCAB_FILE,
};
use crate::text::{read_lines, write_lines, BpeModel, CharVocab, ParallelCorpus, SourceVocab, Split};
use crate::train::{train, tune_lambda};

#[derive(Debug, Parser)]
#[command(name = "morphnmt", version, about = "Character-level NMT with a morphology table and label channel")]
pub struct Cli {
    /// Flat key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set epochs=5`. Repeatable; wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Shorthand for `--set variant=V`.
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ArtifactDir {
    /// Directory holding bpe.merges, source.vocab, char.vocab, segmentations.txt, affixes.txt and labels.txt.
    #[arg(long)]
    pub artifacts: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic suffixing corpus with gold segmentations.
    GenSynth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        dev: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
    },
    /// Learn source-side BPE merges.
    LearnBpe {
        #[arg(long)]
        source: PathBuf,
        #[command(flatten)]
        dir: ArtifactDir,
    },
    /// Build the source-unit and target-character vocabularies.
    BuildVocab {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        dir: ArtifactDir,
    },
    /// Segment target-side words.
    Segment {
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        dir: ArtifactDir,
        /// Gold segmentations to score boundary recall against.
        #[arg(long)]
        gold: Option<PathBuf>,
        /// Store the gold segmentations instead of running the segmenter.
        #[arg(long, requires = "gold")]
        use_gold: bool,
    },
    /// Extract the affix inventory and the label classes.
    BuildAffixes {
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        dir: ArtifactDir,
    },
    /// Pretrain affix embeddings with the compositional language model.
    PretrainEmbeddings {
        #[arg(long)]
        target: PathBuf,
        #[command(flatten)]
        dir: ArtifactDir,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train one model.
    Train {
        #[arg(long)]
        train_src: PathBuf,
        #[arg(long)]
        train_tgt: PathBuf,
        #[arg(long, requires = "dev_tgt")]
        dev_src: Option<PathBuf>,
        #[arg(long, requires = "dev_src")]
        dev_tgt: Option<PathBuf>,
        #[command(flatten)]
        dir: ArtifactDir,
        /// Pretrained affix embeddings for the morphology table.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-epoch CSV report.
        #[arg(long)]
        report: PathBuf,
    },
    /// Translate a source file, one sentence per line.
    Translate {
        #[command(flatten)]
        dir: ArtifactDir,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Corpus BLEU of a hypothesis file against a reference file.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
    /// Paired bootstrap test of system A against system B.
    Bootstrap {
        #[arg(long)]
        system_a: PathBuf,
        #[arg(long)]
        system_b: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// JSON report.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write morphology-table attention of one teacher-forced sentence pair.
    ExportAttention {
        #[command(flatten)]
        dir: ArtifactDir,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// 1-based line of the pair.
        #[arg(long, default_value_t = 1)]
        line: usize,
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long)]
        top: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Train every variant for several seeds on one synthetic task and compare with baseline.
    CompareVariants {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_values_t = Variant::ALL.to_vec())]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 200)]
        dev: usize,
        #[arg(long, default_value_t = 200)]
        test: usize,
        /// Label with the generator's segmentations instead of the segmenter's.
        #[arg(long)]
        gold_segmentation: bool,
    },
}

impl Cli {
    pub fn resolve_config(&self) -> Result<Config> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(v) = self.variant {
            overrides.push(format!("variant={v}"));
        }
        Config::resolve(self.config.as_deref(), &overrides)
    }
}

/// Parses `argv` (program name first) and runs the command. Returns the process exit status:
/// 0 on success, 1 on a failed command, 2 on a usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::file(*p, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")));
        }
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn load_pairs(source: &Path, target: &Path, split: Split) -> Result<ParallelCorpus> {
    ParallelCorpus::load(source, target, split)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::GenSynth { out_dir, train, dev, test } => {
            create_dir(out_dir)?;
            let splits = [(Split::Train, *train), (Split::Dev, *dev), (Split::Test, *test)];
            let parts = cfg.synth.generate(&splits)?;
            for ((split, _), part) in splits.iter().zip(&parts) {
                let name = split.to_string();
                part.save(
                    &out_dir.join(format!("{name}.src")),
                    &out_dir.join(format!("{name}.tgt")),
                    &out_dir.join(format!("{name}.gold")),
                )?;
                println!("{name}: {} sentence pairs, {} word types", part.corpus.len(), part.gold.len());
            }
        }
        Command::LearnBpe { source, dir } => {
            require(&[source])?;
            create_dir(&dir.artifacts)?;
            let lines = read_lines(source)?;
            let bpe = BpeModel::learn(&lines, cfg.prepare.bpe_merges)?;
            bpe.save(&dir.artifacts.join(BPE_FILE))?;
            println!("{} merges", bpe.merges().len());
        }
        Command::BuildVocab { source, target, dir } => {
            let bpe_path = dir.artifacts.join(BPE_FILE);
            require(&[source, target, &bpe_path])?;
            let bpe = BpeModel::load(&bpe_path)?;
            let sv = SourceVocab::build(bpe.apply_all(&read_lines(source)?).concat())?;
            let cv = CharVocab::build(&read_lines(target)?, cfg.prepare.char_cap)?;
            sv.save(&dir.artifacts.join(SOURCE_VOCAB_FILE))?;
            cv.save(&dir.artifacts.join(CHAR_VOCAB_FILE))?;
            println!("source vocabulary {}, character vocabulary {}", sv.len(), cv.len());
        }
        Command::Segment { target, dir, gold, use_gold } => {
            require(&[target])?;
            if let Some(g) = gold {
                require(&[g])?;
            }
            create_dir(&dir.artifacts)?;
            let counts = target_word_counts(&read_lines(target)?);
            let gold = gold.as_deref().map(load_segmentations).transpose()?;
            let segs = match (&gold, use_gold) {
                (Some(g), true) => {
                    let missing: Vec<&String> = counts.keys().filter(|w| !g.contains_key(*w)).collect();
                    if let Some(w) = missing.first() {
                        return Err(Error::invalid(format!("{} words (e.g. `{w}`) have no gold segmentation", missing.len())));
                    }
                    g.iter().filter(|(w, _)| counts.contains_key(*w)).map(|(w, s)| (w.clone(), s.clone())).collect()
                }
                _ => {
                    let mdl = MdlConfig {
                        seed: cfg.prepare.mdl_seed,
                        ..Default::default()
                    };
                    segment_corpus(&counts, &mdl)?.segmentations
                }
            };
            save_segmentations(&dir.artifacts.join(SEGMENTATIONS_FILE), &segs)?;
            println!("{} word types segmented", segs.len());
            if let Some(g) = &gold {
                println!("boundary recall {:.4}", boundary_recall(&segs, g));
            }
        }
        Command::BuildAffixes { target, dir } => {
            let seg_path = dir.artifacts.join(SEGMENTATIONS_FILE);
            require(&[target, &seg_path])?;
            let segs = load_segmentations(&seg_path)?;
            let counts = target_word_counts(&read_lines(target)?);
            let inventory = extract_affixes(
                counts.iter().filter_map(|(w, &c)| segs.get(w).map(|s| (s, c))),
                cfg.prepare.affix_min_count,
            )?;
            let labels = LabelSet::build(&inventory);
            inventory.save(&dir.artifacts.join(AFFIXES_FILE))?;
            labels.save(&dir.artifacts.join(LABELS_FILE))?;
            println!("{} affixes, {} label classes", inventory.len(), labels.len());
        }
        Command::PretrainEmbeddings { target, dir, output } => {
            let seg_path = dir.artifacts.join(SEGMENTATIONS_FILE);
            let aff_path = dir.artifacts.join(AFFIXES_FILE);
            require(&[target, &seg_path, &aff_path])?;
            let sentences = read_lines(target)?;
            let (lm, report) = pretrain(
                &sentences,
                &load_segmentations(&seg_path)?,
                &AffixInventory::load(&aff_path)?,
                &cfg.embedding_config(),
            )?;
            lm.export_tsv(output)?;
            for (epoch, nll) in report.epoch_nll.iter().enumerate() {
                println!("epoch {epoch} nll {nll:.4}");
            }
        }
        Command::Train {
            train_src,
            train_tgt,
            dev_src,
            dev_tgt,
            dir,
            embeddings,
            checkpoint,
            report,
        } => {
            let mut inputs: Vec<&Path> = vec![train_src, train_tgt, &dir.artifacts];
            inputs.extend(dev_src.as_deref());
            inputs.extend(dev_tgt.as_deref());
            inputs.extend(embeddings.as_deref());
            require(&inputs)?;
            let prepared = Prepared::load(&dir.artifacts)?;
            let train_set = prepared.annotate(&load_pairs(train_src, train_tgt, Split::Train)?);
            let dev_set = match (dev_src, dev_tgt) {
                (Some(s), Some(t)) => prepared.annotate(&load_pairs(s, t, Split::Dev)?),
                _ => Vec::new(),
            };
            let mut model = Model::init(prepared.model_config(cfg.variant, cfg.dims.clone()), cfg.seed)?;
            if let Some(path) = embeddings {
                let table = init_morph_table_from_map(&load_embeddings_tsv(path)?, &prepared.labels, cfg.dims.init_scale, cfg.seed)?;
                set_morph_table(&mut model, table)?;
            }
            let tcfg = cfg.train_config();
            let (model, train_report) = if cfg.variant.uses_labels() && cfg.lambda_grid.len() > 1 {
                let search = tune_lambda(&model, &train_set, &dev_set, &prepared.chars, &cfg.lambda_grid, &tcfg)?;
                for (l, b) in &search.scores {
                    println!("lambda {l} dev BLEU {b:.4}");
                }
                println!("selected lambda {}", search.best);
                (search.model, search.report)
            } else {
                train(model, &train_set, &dev_set, &prepared.chars, &tcfg)?
            };
            save_checkpoint(checkpoint, &model, cfg.seed, &prepared.vocab_hash())?;
            train_report.write_csv(report)?;
            for row in &train_report.rows {
                print!("epoch {} train_nll {:.4}", row.epoch, row.train_nll);
                if let (Some(n), Some(b)) = (row.dev_nll, row.dev_bleu) {
                    print!(" dev_nll {n:.4} dev_bleu {b:.4}");
                }
                println!();
            }
        }
        Command::Translate {
            dir,
            checkpoint,
            input,
            output,
        } => {
            require(&[checkpoint, input, &dir.artifacts])?;
            let prepared = Prepared::load(&dir.artifacts)?;
            let (model, _) = load_checkpoint(checkpoint, None, Some(&prepared.vocab_hash()))?;
            let sources = read_lines(input)?;
            let out = prepared.translate_all(&model, &sources, cfg.beam, cfg.length_normalize)?;
            write_lines(output, &out)?;
            println!("translated {} sentences", out.len());
        }
        Command::Evaluate { hyp, reference } => {
            require(&[hyp, reference])?;
            let score = bleu(&read_lines(hyp)?, &read_lines(reference)?)?;
            println!("BLEU {:.4}", score.value);
            let p: Vec<String> = score.precisions.iter().map(|p| format!("{p:.4}")).collect();
            println!("precisions {} brevity_penalty {:.4}", p.join("/"), score.brevity_penalty);
        }
        Command::Bootstrap {
            system_a,
            system_b,
            reference,
            output,
        } => {
            require(&[system_a, system_b, reference])?;
            let report = paired_bootstrap(
                &read_lines(system_a)?,
                &read_lines(system_b)?,
                &read_lines(reference)?,
                cfg.bootstrap_samples,
                cfg.p,
                cfg.seed,
            )?;
            if let Some(path) = output {
                report.save(path)?;
            }
            println!("win fraction A {:.4} significant {}", report.win_fraction_a, report.significant);
        }
        Command::ExportAttention {
            dir,
            checkpoint,
            source,
            target,
            line,
            heatmap,
            top,
            k,
        } => {
            require(&[checkpoint, source, target, &dir.artifacts])?;
            let prepared = Prepared::load(&dir.artifacts)?;
            let (model, _) = load_checkpoint(checkpoint, None, Some(&prepared.vocab_hash()))?;
            let corpus = load_pairs(source, target, Split::Test)?;
            let (s, t) = line
                .checked_sub(1)
                .and_then(|i| corpus.pairs.get(i))
                .ok_or_else(|| Error::invalid(format!("line {line} is outside 1..={}", corpus.len())))?;
            let map = export_attention(&model, &prepared.annotate_pair(s, t), &prepared.chars, &prepared.labels, heatmap, top, *k)?;
            println!("{} steps x {} columns", map.rows.len(), map.columns.len());
        }
        Command::CompareVariants {
            out_dir,
            seeds,
            variants,
            train,
            dev,
            test,
            gold_segmentation,
        } => {
            if seeds.len() < 3 {
                eprintln!("warning: {} seed(s); medians and significance counts are not meaningful below 3", seeds.len());
            }
            create_dir(out_dir)?;
            let mut exp = cfg.experiment(*train, *dev, *test);
            exp.variants = variants.clone();
            exp.gold_segmentation = *gold_segmentation;
            fs::write(out_dir.join("config.toml"), cfg.describe()).map_err(|e| Error::file(out_dir, e))?;
            let report = compare_variants(&exp, seeds, Some(out_dir), &mut |msg| eprintln!("{msg}"))?;
            println!("variant\tmedian_dev\tmedian_test\tmedian_delta\tsignificant");
            for s in &report.summary {
                println!(
                    "{}\t{:.4}\t{:.4}\t{}\t{}/{}",
                    s.variant,
                    s.median_dev_bleu,
                    s.median_test_bleu,
                    s.median_delta.map_or("-".to_string(), |d| format!("{d:+.4}")),
                    s.significant_seeds,
                    s.seeds
                );
            }
        }
    }
    Ok(())
}
