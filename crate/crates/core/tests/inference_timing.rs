use cardiomodal::dataset::SourceKind;
use cardiomodal::inference::{timed_pipeline, FusionRule, PipelineConfig};
use cardiomodal::registry::DecomposeConfig;
use cardiomodal::synth::{gaussian_blob, make_oscillator, standing_wave, Tone};
use cardiomodal::vit::{VitConfig, VitParams};

#[test]
fn phase_timings_on_a_full_size_sequence() {
    let shape = (256, 256);
    let tones = [
        Tone { pattern: gaussian_blob(shape, 100.0, 140.0, 30.0), omega: 0.0, growth: 0.0, phase: 0.0, amplitude: 1.0 },
        Tone { pattern: gaussian_blob(shape, 100.0, 140.0, 30.0), omega: 12.0, growth: 0.0, phase: 0.3, amplitude: 0.6 },
        Tone { pattern: standing_wave(shape, 2, 3), omega: 3.0, growth: 0.0, phase: 1.0, amplitude: 0.3 },
    ];
    let s = make_oscillator("big", shape, &tones, 40, 0.02, 0.05, 1).unwrap();
    let model = VitConfig::tiny(2);
    let params = VitParams::init(&model, 0).unwrap();
    let pc = PipelineConfig { decompose: DecomposeConfig::default(), kind: SourceKind::HodmdRecon, rule: FusionRule::Average, threshold: 0.0 };
    let (records, t) = timed_pipeline(&s.sequence, &params, &model, &pc).unwrap();
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].scores.len(), 40);
    let a = t.averages;
    assert_eq!(a.images, 40);
    for v in [a.svd_ms, a.hosvd_ms, a.hodmd_ms, a.pred_ms] {
        assert!(v >= 0.0);
    }
    let phases = (a.svd_ms + a.hosvd_ms + a.hodmd_ms + a.pred_ms) * a.images as f64;
    assert!(phases <= t.total_ms * 1.1, "{phases} > {}", t.total_ms);
    assert!(a.hosvd_ms > a.hodmd_ms, "{a:?}");
}
