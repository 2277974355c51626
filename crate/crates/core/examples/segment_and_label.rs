//! Unsupervised segmentation of the synthetic target side, affix extraction and character labels.

use morphnmt::morphology::{boundary_recall, extract_affixes, label_characters, segment_corpus, LabelSet, MdlConfig};
use morphnmt::pipeline::target_word_counts;
use morphnmt::synth::SyntheticLangSpec;
use morphnmt::text::{CharVocab, Split};

fn main() -> morphnmt::Result<()> {
    let train = SyntheticLangSpec::default().generate(&[(Split::Train, 2000)])?.remove(0);
    let targets: Vec<&str> = train.corpus.pairs.iter().map(|(_, t)| t.as_str()).collect();
    let counts = target_word_counts(&targets);

    let outcome = segment_corpus(&counts, &MdlConfig::default())?;
    println!("{} word types, {} accepted re-analyses", counts.len(), outcome.accepted_splits.len());
    println!("cost per epoch: {:?}", outcome.epoch_costs.iter().map(|c| c.round()).collect::<Vec<_>>());
    println!("gold boundary recall {:.4}", boundary_recall(&outcome.segmentations, &train.gold));

    let inventory = extract_affixes(
        counts.iter().map(|(w, &c)| (&outcome.segmentations[w], c)),
        5,
    )?;
    let labels = LabelSet::build(&inventory);
    println!("{} affixes -> {} label classes", inventory.len(), labels.len());

    let chars = CharVocab::build(&targets, 400)?;
    let sentence = targets[1];
    let annotated = label_characters(sentence, &outcome.segmentations, &labels, &chars);
    let shown: Vec<&str> = annotated.label_ids.iter().map(|&l| labels.name(l)).collect();
    println!("{sentence}\n{}", shown.join(" "));
    Ok(())
}
