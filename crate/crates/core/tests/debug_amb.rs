// temporary diagnostic
use planmatch_core::pipeline::*;
use planmatch_core::synth::{gen_scene, placement_matches};

#[test]
fn probe_ambiguity_seed() {
    for seed in [4u64, 5] {
        let scene = gen_scene(&ambiguity_scene_spec(seed)).unwrap();
        let ctx = scene_context(&scene).unwrap();
        let cfg = AlignConfig {
            weights: benchmark_weights(),
            ..Default::default()
        };
        let (sets, rejected) = search_all(&ctx, &scene.scans, &cfg).unwrap();
        println!("== seed {seed} rejected={rejected:?}");
        let (t1, t5) = candidate_error_rates(&sets, &scene.gt);
        println!("top1 err {t1:.2} top5 err {t5:.2}");
        for set in &sets {
            let gt = scene
                .gt
                .entries
                .iter()
                .find(|e| e.scan_id == set.scan_id)
                .unwrap()
                .placement;
            let rank = set
                .candidates
                .iter()
                .position(|c| placement_matches(&c.placement(), &gt, 3));
            let cands: Vec<String> = set
                .candidates
                .iter()
                .map(|c| format!("k{} ({},{}) {:.3}", c.k, c.tx, c.ty, c.score))
                .collect();
            println!(
                "  {} gt=k{} ({},{}) rank={rank:?} cands=[{}]",
                set.scan_id,
                gt.k,
                gt.tx,
                gt.ty,
                cands.join(" | ")
            );
        }
    }
}
