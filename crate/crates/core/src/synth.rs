//! Deterministic synthetic data: French and English clinical-style prose with
//! OCR-like debris, labelled language-identification samples, and small
//! downstream task datasets. Everything is a pure function of the seed.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hashing::derive_seed;

const FR_SUBJECTS: &[&str] = &[
    "Le patient",
    "La patiente",
    "L'enfant",
    "Le nourrisson",
    "Monsieur D.",
    "Madame L.",
    "Le sujet âgé",
    "La femme enceinte",
];
const FR_VERBS: &[&str] = &[
    "présente",
    "décrit",
    "signale",
    "rapporte",
    "développe",
    "manifeste",
    "consulte pour",
    "est hospitalisé pour",
];
const FR_FINDINGS: &[&str] = &[
    "une douleur thoracique",
    "une fièvre persistante",
    "une dyspnée d'effort",
    "une toux sèche",
    "des céphalées intenses",
    "une hypertension artérielle",
    "une insuffisance rénale aiguë",
    "une éruption cutanée",
    "des nausées matinales",
    "une tachycardie sinusale",
    "une anémie ferriprive",
    "un œdème des membres inférieurs",
    "une pneumopathie communautaire",
    "un diabète de type 2 déséquilibré",
    "une fibrillation auriculaire",
    "des troubles de la déglutition",
];
const FR_TIMES: &[&str] = &[
    "depuis trois jours",
    "depuis une semaine",
    "depuis la veille",
    "depuis plusieurs mois",
    "après l'intervention",
    "au décours d'une chimiothérapie",
    "à l'admission",
    "lors de la consultation",
];
const FR_TREATMENTS: &[&str] = &[
    "Un traitement par amoxicilline est instauré",
    "La metformine est augmentée progressivement",
    "Une anticoagulation curative est débutée",
    "Le paracétamol est prescrit à la demande",
    "Une surveillance clinique rapprochée est proposée",
    "Un bilan biologique complet est demandé",
    "Une échographie abdominale est programmée",
    "Le furosémide est administré par voie intraveineuse",
    "Une imagerie par résonance magnétique est réalisée",
    "La posologie du bisoprolol est adaptée",
];
const FR_OUTCOMES: &[&str] = &[
    "L'évolution est favorable sous traitement.",
    "Les symptômes régressent en quarante-huit heures.",
    "Aucune complication n'est observée à distance.",
    "Une réévaluation est prévue dans un mois.",
    "Le retour à domicile est autorisé.",
    "Les examens complémentaires sont sans particularité.",
    "La fonction rénale se normalise progressivement.",
    "Une consultation de suivi est organisée en cardiologie.",
];
const EN_SUBJECTS: &[&str] = &[
    "The patient",
    "A young woman",
    "The elderly man",
    "The child",
    "Our subject",
    "The pregnant woman",
];
const EN_VERBS: &[&str] = &["presents with", "reports", "describes", "develops", "was admitted for"];
const EN_FINDINGS: &[&str] = &[
    "chest pain",
    "persistent fever",
    "shortness of breath",
    "a dry cough",
    "severe headaches",
    "acute kidney injury",
    "a skin rash",
    "atrial fibrillation",
    "iron deficiency anemia",
    "swelling of both legs",
];
const EN_TAILS: &[&str] = &[
    "for three days.",
    "since last week.",
    "after the surgery.",
    "during the night.",
    "on admission.",
    "following chemotherapy.",
];
const EN_FOLLOWUPS: &[&str] = &[
    "Treatment with amoxicillin was started.",
    "Blood tests were ordered.",
    "The symptoms resolved within two days.",
    "No complications were observed.",
    "A follow-up visit was scheduled.",
    "An abdominal ultrasound was performed.",
];
const OCR_DEBRIS: &[&str] = &[
    "Page 3 / 12",
    "12/03/2019 14:22",
    "Tél. 01 45 67 89 10",
    "— — —",
    "Réf. 2019-0042-B",
    "www.",
    "| | |",
    "Fig. 2",
    "0,25 0,50 0,75 1,00",
];

fn fr_sentence(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..3) {
        0 => format!(
            "{} {} {} {}.",
            FR_SUBJECTS.choose(rng).unwrap(),
            FR_VERBS.choose(rng).unwrap(),
            FR_FINDINGS.choose(rng).unwrap(),
            FR_TIMES.choose(rng).unwrap()
        ),
        1 => format!(
            "{} chez un patient de {} ans.",
            FR_TREATMENTS.choose(rng).unwrap(),
            rng.random_range(18..95)
        ),
        _ => FR_OUTCOMES.choose(rng).unwrap().to_string(),
    }
}

fn en_sentence(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.7) {
        format!(
            "{} {} {} {}",
            EN_SUBJECTS.choose(rng).unwrap(),
            EN_VERBS.choose(rng).unwrap(),
            EN_FINDINGS.choose(rng).unwrap(),
            EN_TAILS.choose(rng).unwrap()
        )
    } else {
        EN_FOLLOWUPS.choose(rng).unwrap().to_string()
    }
}

/// Character-level OCR noise: substitutions of look-alike glyphs.
fn ocr_noise(s: &str, rng: &mut ChaCha8Rng, rate: f64) -> String {
    s.chars()
        .map(|c| {
            if !rng.random_bool(rate) {
                return c;
            }
            match c {
                'l' => '1',
                'o' => '0',
                'e' => 'c',
                'é' => 'e',
                'm' => 'n',
                'i' => 'l',
                _ => c,
            }
        })
        .collect()
}

/// French clinical paragraph of `n` sentences.
pub fn french_paragraph(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| fr_sentence(rng)).collect::<Vec<_>>().join(" ")
}

pub fn english_paragraph(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| en_sentence(rng)).collect::<Vec<_>>().join(" ")
}

/// A synthetic crawl: mostly French documents, some English, and OCR debris
/// lines that the quality filter should drop. Documents are separated by a
/// blank line and paragraphs never contain one.
pub fn crawl_text(seed: u64, n_docs: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6372_6177]));
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let n = rng.random_range(3..9);
        let roll: f64 = rng.random();
        let mut doc = if roll < 0.8 {
            french_paragraph(&mut rng, n)
        } else {
            english_paragraph(&mut rng, n)
        };
        if rng.random_bool(0.3) {
            doc = ocr_noise(&doc, &mut rng, 0.02);
        }
        if rng.random_bool(0.4) {
            doc.push(' ');
            doc.push_str(OCR_DEBRIS.choose(&mut rng).unwrap());
        }
        docs.push(doc);
    }
    let mut out = docs.join("\n\n");
    out.push('\n');
    out
}

/// Roughly `target_bytes` of French clinical prose, one paragraph per line.
pub fn french_corpus(seed: u64, target_bytes: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6672]));
    let mut out = String::with_capacity(target_bytes + 1024);
    while out.len() < target_bytes {
        let n = rng.random_range(2..7);
        out.push_str(&french_paragraph(&mut rng, n));
        out.push('\n');
    }
    out
}

/// `n` distinct French sentences (or as many as the generator yields).
pub fn french_sentences(seed: u64, n: usize) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x7365_6e74]));
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    let mut tries = 0;
    while out.len() < n && tries < n * 50 {
        tries += 1;
        let s = fr_sentence(&mut rng);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Labelled `(text, lang)` pairs for language-identification training.
pub fn langid_samples(seed: u64, per_lang: usize) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6c61_6e67]));
    let mut out = Vec::with_capacity(2 * per_lang);
    for _ in 0..per_lang {
        out.push((fr_sentence(&mut rng), "fr".to_string()));
        out.push((en_sentence(&mut rng), "en".to_string()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

const NER_DRUGS: &[&str] = &[
    "amoxicilline",
    "metformine",
    "paracétamol",
    "furosémide",
    "bisoprolol",
    "héparine",
];
const NER_DISEASES: &[&[&str]] = &[
    &["insuffisance", "rénale"],
    &["hypertension"],
    &["diabète"],
    &["pneumopathie"],
    &["fibrillation", "auriculaire"],
    &["anémie"],
];
const NER_FILLER: &[&str] = &[
    "le",
    "patient",
    "reçoit",
    "de",
    "la",
    "pour",
    "une",
    "traitement",
    "sous",
    "avec",
    "depuis",
    "jours",
];

/// BIO-tagged sentences where every tag is determined by the word itself:
/// drug names are `B-DRUG`, disease words are `B-DISO` / `I-DISO`, the rest `O`.
pub fn ner_dataset(seed: u64, n: usize) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6e6572]));
    (0..n)
        .map(|_| {
            let mut tokens = Vec::new();
            let mut tags = Vec::new();
            let len = rng.random_range(4..10);
            while tokens.len() < len {
                match rng.random_range(0..4) {
                    0 => {
                        tokens.push(NER_DRUGS.choose(&mut rng).unwrap().to_string());
                        tags.push("B-DRUG".to_string());
                    }
                    1 => {
                        let d = NER_DISEASES.choose(&mut rng).unwrap();
                        for (i, w) in d.iter().enumerate() {
                            tokens.push(w.to_string());
                            tags.push(if i == 0 { "B-DISO" } else { "I-DISO" }.to_string());
                        }
                    }
                    _ => {
                        tokens.push(NER_FILLER.choose(&mut rng).unwrap().to_string());
                        tags.push("O".to_string());
                    }
                }
            }
            TaggedSentence { tokens, tags }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledText {
    pub text: String,
    pub labels: Vec<String>,
}

const MCQA_CUES: &[(&str, &str)] = &[
    ("antibiotique", "A"),
    ("anticoagulant", "B"),
    ("diurétique", "C"),
    ("antalgique", "D"),
    ("bêtabloquant", "E"),
];
const MCQA_FILLER: &[&str] = &[
    "quel",
    "traitement",
    "est",
    "indiqué",
    "chez",
    "ce",
    "patient",
    "parmi",
    "les",
    "propositions",
    "suivantes",
];

/// Multi-label items: the answer set is exactly the set of cue words present,
/// and about a tenth of items have no cue and an empty answer set.
pub fn multilabel_dataset(seed: u64, n: usize) -> Vec<LabelledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x6d63_7161]));
    (0..n)
        .map(|_| {
            let mut words: Vec<&str> = (0..rng.random_range(3..7))
                .map(|_| *MCQA_FILLER.choose(&mut rng).unwrap())
                .collect();
            let mut labels = Vec::new();
            if !rng.random_bool(0.1) {
                for &(cue, lab) in MCQA_CUES {
                    if rng.random_bool(0.4) {
                        let at = rng.random_range(0..=words.len());
                        words.insert(at, cue);
                        labels.push(lab.to_string());
                    }
                }
            }
            LabelledText {
                text: words.join(" "),
                labels,
            }
        })
        .collect()
}

/// Binary classification separable by a single keyword.
pub fn binary_dataset(seed: u64, n: usize) -> Vec<LabelledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x62696e]));
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            let mut words: Vec<&str> = (0..rng.random_range(3..7))
                .map(|_| *MCQA_FILLER.choose(&mut rng).unwrap())
                .collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, if positive { "urgent" } else { "stable" });
            LabelledText {
                text: words.join(" "),
                labels: vec![if positive { "urgent" } else { "stable" }.to_string()],
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(crawl_text(3, 20), crawl_text(3, 20));
        assert_ne!(crawl_text(3, 20), crawl_text(4, 20));
        assert_eq!(ner_dataset(1, 5), ner_dataset(1, 5));
    }

    #[test]
    fn crawl_has_no_blank_lines_inside_documents() {
        let t = crawl_text(1, 30);
        assert_eq!(t.split("\n\n").count(), 30);
    }

    #[test]
    fn ner_tags_align() {
        for s in ner_dataset(2, 50) {
            assert_eq!(s.tokens.len(), s.tags.len());
            for (i, t) in s.tags.iter().enumerate() {
                if t == "I-DISO" {
                    assert!(i > 0 && s.tags[i - 1].ends_with("DISO"));
                }
            }
        }
    }

    #[test]
    fn corpus_reaches_target_size() {
        let c = french_corpus(0, 10_000);
        assert!(c.len() >= 10_000);
        assert_eq!(french_sentences(0, 100).len(), 100);
    }
}
