mod common;

use metaforge::mutenc::{
    encode_enhanced, encode_standard, format_mutation_list, parse_mutation_list, EncoderMode, Mutation,
    Vocabulary, AMINO_ACIDS, CLS, PAD, SEP, UNK,
};
use proptest::prelude::*;

fn residue() -> impl Strategy<Value = char> {
    prop::sample::select(AMINO_ACIDS.to_vec())
}

/// A sequence with up to three distinct, sorted substitutions.
fn mutated_sequence(max_len: usize) -> impl Strategy<Value = (String, Vec<Mutation>)> {
    prop::collection::vec(residue(), 1..max_len)
        .prop_flat_map(|seq| {
            let n = seq.len();
            (
                Just(seq),
                prop::collection::btree_set(0..n, 0..=3.min(n)),
                prop::collection::vec(residue(), 3),
            )
        })
        .prop_filter_map("replacement equals original", |(seq, sites, repl)| {
            let muts: Vec<Mutation> = sites
                .into_iter()
                .zip(repl)
                .map(|(i, r)| Mutation { original: seq[i], position: i + 1, replacement: r })
                .collect();
            if muts.iter().any(|m| m.original == m.replacement) {
                return None;
            }
            Some((seq.into_iter().collect(), muts))
        })
}

proptest! {
    #[test]
    fn enhanced_has_no_unknown_tokens((seq, muts) in mutated_sequence(120), max_len in 8usize..200) {
        let v = Vocabulary::default();
        let enc = encode_enhanced(&seq, &muts, &v, max_len).unwrap();
        prop_assert_eq!(enc.count(UNK), 0);
        prop_assert_eq!(enc.len(), max_len);
        prop_assert_eq!(enc.ids[0], CLS);
        for (&id, &m) in enc.ids.iter().zip(&enc.mask) {
            prop_assert_eq!(m == 0, id == PAD);
        }
    }

    #[test]
    fn untruncated_enhanced_round_trips((seq, muts) in mutated_sequence(80)) {
        let v = Vocabulary::default();
        let enc = encode_enhanced(&seq, &muts, &v, 1024).unwrap();
        prop_assert_eq!(enc.active_len(), 1 + seq.len() + 4 * muts.len());
        prop_assert_eq!(common::reconstruct_wild_type(enc.active_ids(), &v), seq);
    }

    #[test]
    fn truncation_keeps_every_site((seq, muts) in mutated_sequence(300), max_len in 24usize..64) {
        prop_assume!(!muts.is_empty());
        let v = Vocabulary::default();
        let enc = encode_enhanced(&seq, &muts, &v, max_len).unwrap();
        prop_assert_eq!(enc.count(SEP), 3 * muts.len());
        prop_assert!(enc.active_len() <= max_len);
    }

    #[test]
    fn standard_marks_every_digit_unknown((seq, muts) in mutated_sequence(150)) {
        prop_assume!(!muts.is_empty());
        let v = Vocabulary::default();
        let text = format_mutation_list(&muts);
        let enc = encode_standard(&seq, &text, &v, 2048).unwrap();
        let digits = text.chars().filter(char::is_ascii_digit).count();
        prop_assert!(enc.count(UNK) >= digits);
        prop_assert!(enc.count(UNK) >= 1);
    }

    #[test]
    fn mutation_lists_round_trip((_, muts) in mutated_sequence(200)) {
        let text = format_mutation_list(&muts);
        prop_assert_eq!(parse_mutation_list(&text).unwrap(), muts);
    }

    #[test]
    fn encoder_mode_round_trips(enhanced in any::<bool>()) {
        let m = if enhanced { EncoderMode::Enhanced } else { EncoderMode::Standard };
        prop_assert_eq!(m.to_string().parse::<EncoderMode>().unwrap(), m);
    }
}

#[test]
fn vocabulary_file_round_trips() {
    let v = Vocabulary::default();
    let mut buf = Vec::new();
    v.write_to(&mut buf).unwrap();
    assert_eq!(Vocabulary::read_from(&buf[..]).unwrap(), v);
}
