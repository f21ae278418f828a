use facetrace::data::{synthesize, SyntheticSpec};
use facetrace::identity::{builtin_frozen, cosine_similarity};
use facetrace::model::IdentityEmbedding;

fn corpus_embeddings(seed: u64) -> (Vec<usize>, Vec<IdentityEmbedding>) {
    let c = synthesize(&SyntheticSpec::default()).unwrap();
    let bb = builtin_frozen(seed, 128, 32, true).unwrap();
    let refs: Vec<_> = c.originals.iter().collect();
    let ids = c.metadata.pairs.iter().map(|p| p.original_identity).collect();
    (ids, bb.embed_batch(&refs).unwrap())
}

#[test]
fn same_identity_is_closer_than_different_identities() {
    let (ids, emb) = corpus_embeddings(2);
    assert_eq!(emb.len(), 512);
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    let mut worst_inter: f64 = -1.0;
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let c = cosine_similarity(&emb[i], &emb[j]).unwrap();
            if ids[i] == ids[j] {
                intra = (intra.0 + c, intra.1 + 1);
            } else {
                inter = (inter.0 + c, inter.1 + 1);
                worst_inter = worst_inter.max(c);
            }
        }
    }
    let (intra, inter) = (intra.0 / intra.1 as f64, inter.0 / inter.1 as f64);
    assert!(intra > inter, "intra {intra:.4} inter {inter:.4}");
    assert!(worst_inter <= 0.999, "distinct identities collide: {worst_inter}");
}

#[test]
fn identical_seeds_give_identical_backbones() {
    let c = synthesize(&SyntheticSpec {
        n_identities: 2,
        frames_per_identity: 1,
        resolution: 64,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let a = builtin_frozen(42, 64, 64, false).unwrap();
    let b = builtin_frozen(42, 64, 64, false).unwrap();
    for img in c.originals.iter().chain(&c.fakes) {
        let e = a.embed(img).unwrap();
        assert_eq!(e.0.len(), 64);
        assert_eq!(e, b.embed(img).unwrap());
    }
}
