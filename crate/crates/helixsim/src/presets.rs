//! Built-in model and hardware descriptions, selectable by name wherever a
//! file path is accepted.

pub const MODELS: &[(&str, &str)] = &[
    ("llama405b-like", include_str!("../presets/llama405b-like.json")),
    ("deepseek-r1-like", include_str!("../presets/deepseek-r1-like.json")),
    ("dense-roofline", include_str!("../presets/dense-roofline.json")),
];

pub const HARDWARE: &[(&str, &str)] = &[("gb200-nvl72", include_str!("../presets/gb200-nvl72.json"))];

fn find(table: &[(&str, &'static str)], name: &str) -> Option<&'static str> {
    table.iter().find(|(n, _)| *n == name).map(|(_, body)| *body)
}

pub fn model(name: &str) -> Option<&'static str> {
    find(MODELS, name)
}

pub fn hardware(name: &str) -> Option<&'static str> {
    match name {
        "gb200" | "default" => find(HARDWARE, "gb200-nvl72"),
        _ => find(HARDWARE, name),
    }
}

pub fn model_names() -> Vec<&'static str> {
    MODELS.iter().map(|(n, _)| *n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use helix_core::{HardwareSpec, ModelSpec};

    #[test]
    fn every_preset_parses_and_validates() {
        for (name, body) in MODELS {
            let m: ModelSpec = serde_json::from_str(body).unwrap();
            assert_eq!(m.name, *name);
            m.validate().unwrap();
        }
        let hw: HardwareSpec = serde_json::from_str(hardware("gb200").unwrap()).unwrap();
        assert_eq!(hw, HardwareSpec::default());
    }

    #[test]
    fn preset_head_layouts() {
        let llama: ModelSpec = serde_json::from_str(model("llama405b-like").unwrap()).unwrap();
        assert_eq!((llama.query_heads, llama.kv_heads), (128, 8));
        let ds: ModelSpec = serde_json::from_str(model("deepseek-r1-like").unwrap()).unwrap();
        assert_eq!(ds.effective_kv_heads(), 1);
        assert_eq!(ds.query_heads, 128);
    }
}
