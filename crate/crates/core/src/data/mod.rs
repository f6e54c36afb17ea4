//! Datasets, prompt assembly, stratified splits and class weights.

mod csv_import;
mod dataset;
mod split;
mod synth;

pub use csv_import::parse_csv;
pub use dataset::{
    assemble_prompt, assemble_prompt_with_limit, load_dataset, parse_jsonl, to_jsonl, Sample,
    SampleRecord, Taxonomy, MAX_LABELS_PER_SAMPLE, PROMPT_CHAR_LIMIT,
};
pub use split::{
    class_weights, label_counts, label_frequency_order, stratified_split, train_counts, Split,
    SplitConfig, Subset,
};
pub use synth::{synth_generate, synth_label_names, SynthConfig};
