mod common;

#[test]
fn trigger_rule_and_latency_sign() {
    println!("{}", common::latency_rule().unwrap());
}
