//! Generated stand-in corpora with the reference split sizes.
//!
//! Used to exercise ingestion, integrity checks and the pipeline when the
//! real datasets are not available. The two classes differ in surface style
//! (naming, comments, layout), so a model can learn something from them, but
//! nothing about real detectors should be inferred from results on them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{reference_counts, CodeSample, DatasetKind, Label, Language, Provenance, SampleSet, Split};

const TERSE: [&str; 8] = ["i", "n", "tmp", "x", "res", "cnt", "a", "buf"];
const VERBOSE: [&str; 8] = [
    "index",
    "totalCount",
    "resultValue",
    "currentElement",
    "accumulator",
    "inputNumber",
    "maximumValue",
    "outputBuffer",
];
const OPS: [&str; 4] = ["+", "-", "*", "%"];

fn java(label: Label, rng: &mut ChaCha8Rng, k: usize) -> String {
    let names: &[&str] = if label == Label::Human { &TERSE } else { &VERBOSE };
    let v = |rng: &mut ChaCha8Rng| *names.choose(rng).unwrap();
    let (a, b, c) = (v(rng), v(rng), v(rng));
    let op = OPS.choose(rng).unwrap();
    let bound = rng.gen_range(3..50);
    match label {
        Label::Human => format!(
            "class C{k} {{\n  // quick hack\n  static int f(int {a}){{\n    int {b}=0;\n    for(int {c}=0;{c}<{bound};{c}++) {b}={b}{op}{a};\n    return {b};\n  }}\n}}\n"
        ),
        Label::Ai => format!(
            "public class Solution{k} {{\n\n    /**\n     * Computes the aggregated value for the given input.\n     *\n     * @param {a} the input value\n     * @return the computed result\n     */\n    public static int compute(int {a}) {{\n        int {b} = 0;\n        for (int {c} = 0; {c} < {bound}; {c}++) {{\n            {b} = {b} {op} {a};\n        }}\n        return {b};\n    }}\n}}\n"
        ),
    }
}

fn python(label: Label, rng: &mut ChaCha8Rng, k: usize) -> String {
    let names: &[&str] = if label == Label::Human { &TERSE } else { &VERBOSE };
    let v = |rng: &mut ChaCha8Rng| names.choose(rng).unwrap().to_lowercase();
    let (a, b, c) = (v(rng), v(rng), v(rng));
    let op = OPS.choose(rng).unwrap();
    let bound = rng.gen_range(3..50);
    match label {
        Label::Human => format!(
            "def f{k}({a}):\n    {b}=0\n    for {c} in range({bound}): {b}={b}{op}{a}  # ok\n    return {b}\n"
        ),
        Label::Ai => format!(
            "def compute_result_{k}({a}: int) -> int:\n    \"\"\"Compute the aggregated result for the provided input.\"\"\"\n    {b} = 0\n    for {c} in range({bound}):\n        {b} = {b} {op} {a}\n    return {b}\n\n\nif __name__ == \"__main__\":\n    print(compute_result_{k}(3))\n"
        ),
    }
}

/// A corpus of `kind` whose split and class sizes equal the reference
/// statistics; Java for GPTSniffer, Python otherwise.
pub fn fixture_corpus(kind: DatasetKind, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let language = if kind == DatasetKind::GptSniffer { Language::Java } else { Language::Python };
    let mut samples = Vec::new();
    for split in [Split::Train, Split::Test] {
        let counts = reference_counts(kind, split).unwrap_or_default();
        for (label, n) in [(Label::Human, counts.human), (Label::Ai, counts.ai)] {
            for k in 0..n {
                let source = match language {
                    Language::Java => java(label, &mut rng, k),
                    _ => python(label, &mut rng, k),
                };
                samples.push(CodeSample {
                    id: format!("{}-{}-{}-{k}", kind.as_str(), split.as_str(), label.name()),
                    source,
                    language,
                    label,
                    split,
                    dataset: kind,
                });
            }
        }
    }
    SampleSet::new(
        samples,
        Provenance {
            dataset: kind,
            version: format!("fixture-{seed}"),
        },
    )
    .expect("generated ids are unique")
}
