mod common;

#[test]
fn maxpool_viterbi_matches_enumeration() {
    println!("{}", common::viterbi_oracle(300, 31).unwrap());
}
