//! Rendered prompts must match the checked-in golden files byte for byte.
//! Run with `UPDATE_GOLDEN=1` to rewrite them after an intended change.

mod common;

use common::{golden_dir, golden_name, golden_prompts};
use sidelight_core::agents::{PROFILE_HEADING, RULES_HEADING};

#[test]
fn prompts_match_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let dir = golden_dir();
    for (variant, stage, text) in golden_prompts() {
        let path = dir.join(golden_name(variant, stage));
        if update {
            std::fs::write(&path, &text).unwrap();
            continue;
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(want, text, "{} is stale; rerun with UPDATE_GOLDEN=1 if the change is intended", path.display());
    }
}

#[test]
fn golden_files_separate_the_variants() {
    let dir = golden_dir();
    for (variant, stage, _) in golden_prompts() {
        let text = std::fs::read_to_string(dir.join(golden_name(variant, stage))).unwrap();
        assert_eq!(text.contains(RULES_HEADING), variant.includes_rules(), "{variant} {stage}");
        assert_eq!(text.contains(PROFILE_HEADING), variant.includes_profile(), "{variant} {stage}");
        for interest in ["coffee lover", "fun facts/history"] {
            assert_eq!(text.contains(interest), variant.includes_profile(), "{variant} {stage}");
        }
    }
}
