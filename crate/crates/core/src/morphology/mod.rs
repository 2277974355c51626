//! Unsupervised segmentation, affix extraction and per-character morphological labels.

mod affixes;
mod labels;
mod segment;

pub use affixes::{extract_affixes, AffixInventory, AffixKind};
pub use labels::{
    affix_label, label_characters, label_word, AnnotatedTarget, LabelSet, BOS_LABEL, EOS_LABEL, STEM_LABEL,
    UNK_LABEL, WSPACE_LABEL,
};
pub use segment::{
    boundary_recall, load_segmentations, longest_morph_index, save_segmentations, segment_corpus, Dampening,
    MdlConfig, Segmentation, SegmentationOutcome,
};
