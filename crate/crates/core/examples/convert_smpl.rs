//! Converts a JSON export of an SMPL model into a `.stgm` container.
//!
//!     cargo run -p stage-core --example convert_smpl -- smpl_male.json humanoid_male.stgm

use stage_core::body_model::{convert_smpl_json, save_body_model};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output] = args.as_slice() else {
        eprintln!("usage: convert_smpl <model.json> <out.stgm>");
        std::process::exit(1);
    };
    let run = || -> Result<usize, Box<dyn std::error::Error>> {
        let model = convert_smpl_json(&std::fs::read_to_string(input)?)?;
        save_body_model(output, &model)?;
        Ok(model.num_joints())
    };
    match run() {
        Ok(joints) => println!("wrote {output} ({joints} joints)"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
