//! Parses a rules text, prints it back in canonical form, and shows how
//! syntax and semantic errors are reported.
//!
//! cargo run --example validate_rules

use frm::rules::{parse_rules, print_rules};

const GOOD: &str = r#"workflow "voip" priority 5 on kind = ORDER and (attr(order/R, product) = "VOIP" or exists(customer/C1, vip)) {
  step check -> fpa:crm.validate mode sync on_error fail;
  parallel { step line -> fpa:ssw.configure_line mode async on_error retry(2); step port -> fpa:msan.configure_port mode async; }
}"#;

const BAD: [&str; 3] = [
    // missing the dot between adapter and operation
    "workflow \"w\" priority 1 on kind = ORDER {\n  step a -> fpa:crm validate mode sync;\n}\n",
    "workflow \"w\" priority 1 on kind = ORDER {\n  step a -> fpa:crm.validate mode sync on_error retry(0);\n}\n",
    "workflow \"w\" priority 1 on kind = ORDER { step a -> fpa:crm.validate mode sync; }\nworkflow \"w\" priority 2 on kind = EVENT { step a -> fpa:crm.validate mode sync; }\n",
];

fn main() {
    let rules = parse_rules(GOOD).expect("valid rules");
    println!("version {}", rules.version());
    print!("{}", print_rules(&rules));
    for text in BAD {
        match parse_rules(text) {
            Ok(_) => println!("unexpectedly accepted"),
            Err(e) => println!("{}: {e}", e.code()),
        }
    }
}
