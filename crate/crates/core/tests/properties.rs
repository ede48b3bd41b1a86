use std::collections::{BTreeMap, BTreeSet, VecDeque};

use medprompt::dataset::{mask_to_boxes, sample_few_shot, sample_indices, AnnotationRecord, FewShotSpec, LabelMask, MaskMode};
use medprompt::eval::{average_precision, ScoredBox};
use medprompt::experiment::ExperimentConfig;
use medprompt::grounding::{
    alignment_scores, category_scores, grounding_loss, loss_gradient, non_max_suppression, BoxProposal, Detection,
    FeatureMatrix, FeatureRole, GroundingScores, Matrix, TargetMatrix,
};
use medprompt::mlm::{generate_mlm_prompts, ClozeTemplate, MlmOptions, MockMaskedLm, StopList, TokenProbability};
use medprompt::prompt::{
    compose_prompt, fill_template, AttributeName, AttributeValue, AttributeValues, CategorySpec, ComposedPrompt,
    PhraseSpan, PromptEntry, PromptTemplate, PromptVariant, ValueSource,
};
use medprompt::vqa::{
    build_question, default_questions, generate_hybrid_prompt, generate_vqa_prompt, ImageRef, MockVqa,
};
use medprompt::BBox;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const ATTRS: [&str; 5] = ["shape", "color", "texture", "size", "location"];

fn attr(name: &str) -> AttributeName {
    AttributeName::canonical(name).unwrap()
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,7}"
}

fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(word(), 1..=3).prop_map(|w| w.join(" "))
}

fn category_names(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::btree_set(phrase(), 1..=max).prop_map(|s| s.into_iter().collect())
}

/// Attribute names kept in canonical order.
fn attr_subset() -> impl Strategy<Value = Vec<AttributeName>> {
    prop::collection::vec(any::<bool>(), ATTRS.len())
        .prop_map(|m| ATTRS.iter().zip(m).filter(|(_, k)| *k).map(|(a, _)| attr(a)).collect())
}

fn entries(names: &[String], values: &[Vec<String>]) -> Vec<PromptEntry> {
    names
        .iter()
        .zip(values)
        .map(|(n, vals)| {
            let v: AttributeValues = ATTRS
                .iter()
                .zip(vals)
                .map(|(a, v)| (a.to_string(), AttributeValue::manual(v).unwrap()))
                .collect();
            PromptEntry::new(CategorySpec::new(n), v)
        })
        .collect()
}

fn manual_case() -> impl Strategy<Value = (Vec<String>, Vec<Vec<String>>)> {
    category_names(4).prop_flat_map(|names| {
        let n = names.len();
        (
            Just(names),
            prop::collection::vec(prop::collection::vec(phrase(), ATTRS.len()), n),
        )
    })
}

fn rejoin(p: &ComposedPrompt) -> String {
    p.spans
        .iter()
        .map(|s| p.span_tokens(s).join(" "))
        .collect::<Vec<_>>()
        .join(" ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prompt_spans_reassemble_text(
        (names, values) in manual_case(),
        attrs in attr_subset(),
        joiner in prop::sample::select(vec![". ", "; ", ", "]),
    ) {
        let mut template = PromptTemplate::attribute_list(&attrs);
        template = PromptTemplate::with_joiner(template.pattern(), joiner).unwrap();
        let p = compose_prompt(&entries(&names, &values), &template, PromptVariant::Manual, None);
        // A value may legitimately contain the ", " joiner; that is rejected.
        let p = match p {
            Ok(p) => p,
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(rejoin(&p), p.text.clone());
        prop_assert_eq!(p.spans.first().map(|s| s.start), Some(0));
        prop_assert_eq!(p.spans.last().map(|s| s.end), Some(p.num_tokens()));
        for w in p.spans.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
        }
    }

    #[test]
    fn filled_templates_have_no_placeholders((names, values) in manual_case(), attrs in attr_subset()) {
        let template = PromptTemplate::attribute_list(&attrs);
        for e in entries(&names, &values) {
            let s = fill_template(&template, &e.values, &e.category).unwrap();
            prop_assert!(!s.contains('[') && !s.contains(']'), "{}", s);
        }
    }

    #[test]
    fn more_attributes_never_shorten((names, values) in manual_case(), sup in attr_subset(), keep in prop::collection::vec(any::<bool>(), ATTRS.len())) {
        let sub: Vec<AttributeName> = sup.iter().zip(keep).filter(|(_, k)| *k).map(|(a, _)| a.clone()).collect();
        let e = entries(&names, &values);
        let long = compose_prompt(&e, &PromptTemplate::attribute_list(&sup), PromptVariant::Manual, None).unwrap();
        let short = compose_prompt(&e, &PromptTemplate::attribute_list(&sub), PromptVariant::Manual, None).unwrap();
        prop_assert!(long.text.len() >= short.text.len());
        prop_assert!(long.num_tokens() >= short.num_tokens());
    }

    #[test]
    fn composition_is_deterministic((names, values) in manual_case(), attrs in attr_subset()) {
        let t = PromptTemplate::attribute_list(&attrs);
        let a = compose_prompt(&entries(&names, &values), &t, PromptVariant::Manual, None).unwrap();
        let b = compose_prompt(&entries(&names, &values), &t, PromptVariant::Manual, None).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}

fn vocab_token() -> impl Strategy<Value = String> {
    prop_oneof![
        6 => word(),
        1 => "##[a-z]{1,4}",
        1 => prop::sample::select(vec![".".to_string(), ",".to_string(), "!?".to_string()]),
    ]
}

/// Up to three categories with attribute slots, and a weighted vocabulary for
/// every (category, attribute) cloze.
fn mlm_case() -> impl Strategy<Value = (Vec<CategorySpec>, BTreeMap<String, Vec<TokenProbability>>, BTreeSet<String>, usize)> {
    (
        prop::collection::btree_set("[a-z]{3,7}", 1..=3),
        prop::collection::btree_set(prop::sample::select(vec!["shape", "color", "texture"]), 1..=3),
        prop::collection::btree_set(word(), 0..3),
        1usize..6,
    )
        .prop_flat_map(|(names, attrs, stop, k)| {
            let specs: Vec<CategorySpec> = names
                .iter()
                .map(|n| CategorySpec::new(n).with_attributes(attrs.iter().map(|a| attr(a)).collect()))
                .collect();
            let keys: Vec<String> = specs
                .iter()
                .flat_map(|c| {
                    c.attribute_slots
                        .iter()
                        .map(|a| ClozeTemplate::default().build(a, &c.name).unwrap().text)
                        .collect::<Vec<_>>()
                })
                .collect();
            let vocab = prop::collection::vec(
                prop::collection::btree_map(vocab_token(), 1u32..1000, 1..12),
                keys.len(),
            )
            .prop_map(move |dists| {
                keys.iter()
                    .cloned()
                    .zip(dists)
                    .map(|(k, d)| {
                        let row = d
                            .into_iter()
                            .map(|(token, w)| TokenProbability { token, probability: w as f64 })
                            .collect();
                        (k, row)
                    })
                    .collect::<BTreeMap<_, _>>()
            });
            (Just(specs), vocab, Just(stop), Just(k))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn mlm_prompts_respect_rank_stop_list_and_count((specs, vocab, stop, k) in mlm_case()) {
        let backend = MockMaskedLm::from_weights(vocab.clone()).unwrap();
        let options = MlmOptions { stop: StopList::with_tokens(stop.iter().cloned()), ..MlmOptions::default() };
        let template = PromptTemplate::attribute_list(&specs[0].attribute_slots);

        let mut min_available = usize::MAX;
        for c in &specs {
            for a in &c.attribute_slots {
                let key = ClozeTemplate::default().build(a, &c.name).unwrap().text;
                let n = vocab[&key].iter().filter(|t| !options.stop.rejects(&t.token, &c.name)).count();
                min_available = min_available.min(n);
            }
        }

        let result = generate_mlm_prompts(&specs, &template, &backend, k, &options);
        if min_available == 0 {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let set = result.unwrap();
        prop_assert_eq!(set.prompts.len(), k.min(min_available));
        prop_assert_eq!(set.shortfall.is_some(), min_available < k);

        for c in &specs {
            for a in &c.attribute_slots {
                let values: Vec<&AttributeValue> = set
                    .prompts
                    .iter()
                    .map(|p| &p.provenance.iter().find(|cp| cp.category == c.name).unwrap().values[a.name()])
                    .collect();
                for (j, v) in values.iter().enumerate() {
                    prop_assert_eq!(v.rank(), Some(j as u32 + 1));
                    prop_assert!(!options.stop.rejects(v.value(), &c.name));
                    prop_assert!(!stop.contains(v.value()));
                }
                for w in values.windows(2) {
                    prop_assert!(w[0].probability().unwrap() >= w[1].probability().unwrap());
                }
            }
        }

        let again = generate_mlm_prompts(&specs, &template, &backend, k, &options).unwrap();
        prop_assert_eq!(again.prompts, set.prompts);
    }
}

fn image(id: &str) -> ImageRef {
    ImageRef::new(id, &format!("{id}.png"), 64, 64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn vqa_prompts_differ_iff_answers_differ(
        names in prop::collection::btree_set("[a-z]{3,7}", 1..=3),
        answers_a in prop::collection::vec("[a-z]{1,3}", 6),
        flips in prop::collection::vec(prop::option::weighted(0.3, "[a-z]{1,3}"), 6),
    ) {
        let slots = vec![attr("shape"), attr("color")];
        let specs: Vec<CategorySpec> = names.iter().map(|n| CategorySpec::new(n).with_attributes(slots.clone())).collect();
        let questions = default_questions(&slots);
        let template = PromptTemplate::attribute_list(&slots);
        let mut vqa = MockVqa::default();
        let mut same = true;
        let mut i = 0;
        for c in &specs {
            for s in &slots {
                let q = build_question(&questions[s.name()], c).unwrap();
                let a = &answers_a[i];
                let b = flips[i].clone().unwrap_or_else(|| a.clone());
                same &= *a == b;
                vqa.insert("a", &q, a);
                vqa.insert("b", &q, &b);
                i += 1;
            }
        }
        let pa = generate_vqa_prompt(&image("a"), &specs, &questions, &vqa, &template).unwrap();
        let pb = generate_vqa_prompt(&image("b"), &specs, &questions, &vqa, &template).unwrap();
        prop_assert_eq!(pa.text == pb.text, same);
        prop_assert_eq!(pa.image_ref.as_deref(), Some("a"));
        let again = generate_vqa_prompt(&image("a"), &specs, &questions, &vqa, &template).unwrap();
        prop_assert_eq!(again, pa);
    }

    #[test]
    fn hybrid_values_come_from_the_right_backend(
        names in prop::collection::btree_set("[a-z]{3,7}", 1..=3),
        intrinsic in prop::collection::btree_set(prop::sample::select(vec!["shape", "color", "texture", "size"]), 0..=3),
        with_location in any::<bool>(),
        answer in "[a-z]{1,6}",
        place in "[a-z]{1,6}",
    ) {
        let mut slots: Vec<AttributeName> = intrinsic.iter().map(|a| attr(a)).collect();
        if with_location {
            slots.push(attr("location"));
        }
        prop_assume!(!slots.is_empty());
        let specs: Vec<CategorySpec> = names.iter().map(|n| CategorySpec::new(n).with_attributes(slots.clone())).collect();
        let questions = default_questions(&slots);
        let options = MlmOptions::default();
        let mut vocab = BTreeMap::new();
        let mut vqa = MockVqa::default();
        for c in &specs {
            for s in &slots {
                if s.is_location() {
                    let key = options.cloze.build(s, &c.name).unwrap().text;
                    vocab.insert(key, vec![TokenProbability { token: format!("{place}x"), probability: 1.0 }]);
                } else {
                    vqa.insert("img", &build_question(&questions[s.name()], c).unwrap(), &answer);
                }
            }
        }
        let mlm = MockMaskedLm::from_weights(vocab).unwrap();
        let template = PromptTemplate::attribute_list(&slots);
        let p = generate_hybrid_prompt(&image("img"), &specs, &questions, &vqa, &mlm, &options, &template).unwrap();
        prop_assert_eq!(p.variant, PromptVariant::Hybrid);
        for cp in &p.provenance {
            for s in &slots {
                let want = if s.is_location() { ValueSource::Mlm } else { ValueSource::Vqa };
                prop_assert_eq!(cp.values[s.name()].source(), want);
            }
        }
    }
}

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn scores_and_targets(max: usize) -> impl Strategy<Value = (Matrix, Vec<Vec<bool>>)> {
    (1..=max, 1..=max).prop_flat_map(|(r, t)| {
        (matrix(r, t, 6.0), prop::collection::vec(prop::collection::vec(any::<bool>(), t), r))
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn alignment_is_bilinear(
        (o, p) in (1usize..6, 1usize..6, 1usize..5).prop_flat_map(|(r, t, d)| (matrix(r, d, 3.0), matrix(t, d, 3.0))),
        alpha in -4.0f64..4.0,
    ) {
        let o = FeatureMatrix::new(FeatureRole::ImageRegions, o).unwrap();
        let p = FeatureMatrix::new(FeatureRole::TextTokens, p).unwrap();
        let base = alignment_scores(&o, &p).unwrap();
        let left = alignment_scores(&o.scaled(alpha), &p).unwrap();
        let right = alignment_scores(&o, &p.scaled(alpha)).unwrap();
        for ((b, l), r) in base.values().data().iter().zip(left.values().data()).zip(right.values().data()) {
            prop_assert!(close(alpha * b, *l, 1e-12));
            prop_assert!(close(alpha * b, *r, 1e-12));
        }
    }

    #[test]
    fn loss_is_nonnegative_and_ln2_at_zero((s, t) in scores_and_targets(8)) {
        let targets = TargetMatrix::from_rows(&t).unwrap();
        let scores = GroundingScores::new(s.clone()).unwrap();
        prop_assert!(grounding_loss(&scores, &targets).unwrap() >= 0.0);
        let zero = GroundingScores::new(Matrix::zeros(s.rows(), s.cols())).unwrap();
        prop_assert!((grounding_loss(&zero, &targets).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences((s, t) in scores_and_targets(16)) {
        let targets = TargetMatrix::from_rows(&t).unwrap();
        let grad = loss_gradient(&GroundingScores::new(s.clone()).unwrap(), &targets).unwrap();
        let h = 1e-5;
        let loss_at = |m: Matrix| grounding_loss(&GroundingScores::new(m).unwrap(), &targets).unwrap();
        for r in 0..s.rows() {
            for c in 0..s.cols() {
                let mut plus = s.clone();
                plus.set(r, c, s.get(r, c) + h);
                let mut minus = s.clone();
                minus.set(r, c, s.get(r, c) - h);
                let fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
                prop_assert!((fd - grad.get(r, c)).abs() < 1e-6, "cell ({}, {}): fd {} vs {}", r, c, fd, grad.get(r, c));
            }
        }
    }

    #[test]
    fn widening_a_span_never_lowers_scores(
        s in (1usize..6, 2usize..10).prop_flat_map(|(r, t)| matrix(r, t, 5.0)),
        a in 0usize..10,
        b in 0usize..10,
    ) {
        let t = s.cols();
        let (a, b) = (a % t, b % t);
        let (start, end) = (a.min(b), a.max(b) + 1);
        let scores = GroundingScores::new(s.clone()).unwrap();
        let proposals: Vec<BoxProposal> = (0..s.rows())
            .map(|i| BoxProposal { bbox: BBox::new(0.0, 0.0, 1.0 + i as f64, 1.0).unwrap(), region_index: i })
            .collect();
        let span = |start, end| vec![PhraseSpan { category: "x".into(), start, end }];
        let base = category_scores(&scores, &proposals, &span(start, end)).unwrap();
        let mut wider = Vec::new();
        if end < t {
            wider.push(span(start, end + 1));
        }
        if start > 0 {
            wider.push(span(start - 1, end));
        }
        for w in wider {
            let widened = category_scores(&scores, &proposals, &w).unwrap();
            for (x, y) in base.iter().zip(&widened) {
                prop_assert!(y[0] >= x[0]);
            }
        }
    }

    #[test]
    fn nms_is_idempotent(
        raw in prop::collection::vec((0u32..8, 0u32..8, 1u32..6, 1u32..6, 0u32..3, 0u32..20), 0..30),
        nms_iou in prop::sample::select(vec![0.0, 0.3, 0.5, 0.7, 1.0]),
    ) {
        let cats = ["polyp", "wound", "nodule"];
        let dets: Vec<Detection> = raw
            .iter()
            .map(|&(x, y, w, h, c, s)| Detection {
                bbox: BBox::from_xywh(x as f64, y as f64, w as f64, h as f64).unwrap(),
                category: cats[c as usize].to_string(),
                score: s as f64 / 20.0,
            })
            .collect();
        let once = non_max_suppression(dets, nms_iou);
        let twice = non_max_suppression(once.clone(), nms_iou);
        prop_assert_eq!(twice, once);
    }
}

fn mask_rows(max: usize) -> impl Strategy<Value = Vec<Vec<u32>>> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| prop::collection::vec(prop::collection::vec(0u32..4, w), h))
}

fn edge_has_pixel(b: &BBox, hit: impl Fn(usize, usize) -> bool) -> bool {
    let (x0, y0, x1, y1) = (b.x1() as usize, b.y1() as usize, b.x2() as usize, b.y2() as usize);
    let col = |x: usize| (y0..y1).any(|y| hit(x, y));
    let row = |y: usize| (x0..x1).any(|x| hit(x, y));
    col(x0) && col(x1 - 1) && row(y0) && row(y1 - 1)
}

/// Pixels of the 4-connected component containing `(x, y)`.
fn component(rows: &[Vec<u32>], x: usize, y: usize) -> BTreeSet<(usize, usize)> {
    let (w, h) = (rows[0].len(), rows.len());
    let mut seen = BTreeSet::from([(x, y)]);
    let mut queue = VecDeque::from([(x, y)]);
    while let Some((x, y)) = queue.pop_front() {
        let mut next = vec![(x + 1, y), (x, y + 1)];
        if x > 0 {
            next.push((x - 1, y));
        }
        if y > 0 {
            next.push((x, y - 1));
        }
        for (nx, ny) in next {
            if nx < w && ny < h && rows[ny][nx] != 0 && seen.insert((nx, ny)) {
                queue.push_back((nx, ny));
            }
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn instance_boxes_are_tight(rows in mask_rows(12)) {
        let mask = LabelMask::from_rows(&rows).unwrap();
        let boxes = mask_to_boxes(&mask, MaskMode::Instance, 0).unwrap();
        let ids: BTreeSet<u32> = rows.iter().flatten().copied().filter(|&v| v != 0).collect();
        prop_assert_eq!(boxes.len(), ids.len());
        for (b, id) in boxes.iter().zip(&ids) {
            prop_assert!(edge_has_pixel(b, |x, y| rows[y][x] == *id));
        }
    }

    #[test]
    fn binary_boxes_are_tight(rows in mask_rows(12)) {
        let binary: Vec<Vec<u32>> = rows.iter().map(|r| r.iter().map(|&v| (v >= 2) as u32).collect()).collect();
        let mask = LabelMask::from_rows(&binary).unwrap();
        for b in mask_to_boxes(&mask, MaskMode::Binary, 1).unwrap() {
            // The first foreground pixel in raster order inside the box seeds its component.
            let seed = (b.y1() as usize..b.y2() as usize)
                .flat_map(|y| (b.x1() as usize..b.x2() as usize).map(move |x| (x, y)))
                .find(|&(x, y)| binary[y][x] != 0 && edge_has_pixel(&b, |cx, cy| component(&binary, x, y).contains(&(cx, cy))));
            prop_assert!(seed.is_some(), "no component spans {:?}", b);
        }
    }

    #[test]
    fn sampling_is_deterministic(n in 1usize..40, k in 1usize..40, seed in any::<u64>()) {
        let k = k.min(n);
        let a = sample_indices(n, k, seed);
        prop_assert_eq!(&a, &sample_indices(n, k, seed));
        prop_assert_eq!(a.len(), k);
        prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(a.iter().all(|&i| i < n));

        let records: Vec<AnnotationRecord> = (0..n)
            .map(|i| AnnotationRecord { image: image(&format!("img_{i:03}")), boxes: Vec::new() })
            .collect();
        let spec = FewShotSpec::new(k, seed);
        let picked = sample_few_shot(&records, &spec).unwrap();
        prop_assert_eq!(&picked, &sample_few_shot(&records, &spec).unwrap());
        let expected: Vec<AnnotationRecord> = a.iter().map(|&i| records[i].clone()).collect();
        prop_assert_eq!(picked, expected);
    }
}

fn ap_scene() -> impl Strategy<Value = (Vec<Vec<ScoredBox>>, Vec<Vec<BBox>>)> {
    let bx = (0u32..20, 0u32..20, 1u32..10, 1u32..10)
        .prop_map(|(x, y, w, h)| BBox::from_xywh(x as f64, y as f64, w as f64, h as f64).unwrap());
    let scored = (bx.clone(), 0u32..32).prop_map(|(bbox, s)| ScoredBox { bbox, score: s as f64 / 64.0 });
    (1usize..5)
        .prop_flat_map(move |n| {
            (
                prop::collection::vec(prop::collection::vec(scored.clone(), 0..5), n),
                prop::collection::vec(prop::collection::vec(bx.clone(), 0..4), n),
            )
        })
        .prop_filter("needs ground truth", |(_, g)| g.iter().any(|v| !v.is_empty()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ap_falls_with_stricter_iou((dets, gts) in ap_scene()) {
        let ap = average_precision(&dets, &gts, &[0.5, 0.75, 0.95], 100).unwrap();
        prop_assert!(ap.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(ap[0] >= ap[1] && ap[1] >= ap[2], "{:?}", ap);
    }

    #[test]
    fn ap_ignores_score_shift((dets, gts) in ap_scene(), shift in 0u32..32) {
        let thresholds = [0.5, 0.75];
        let base = average_precision(&dets, &gts, &thresholds, 100).unwrap();
        let shifted: Vec<Vec<ScoredBox>> = dets
            .iter()
            .map(|v| v.iter().map(|d| ScoredBox { bbox: d.bbox, score: d.score + shift as f64 / 64.0 }).collect())
            .collect();
        prop_assert_eq!(base, average_precision(&shifted, &gts, &thresholds, 100).unwrap());
    }
}

/// JSON text with object keys emitted in a shuffled order.
fn permuted_json(v: &Value, rng: &mut ChaCha8Rng) -> String {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.shuffle(rng);
            let parts: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}: {}", Value::String(k.clone()), permuted_json(&map[k], rng)))
                .collect();
            format!("{{{}}}", parts.join(", "))
        }
        Value::Array(items) => format!("[{}]", items.iter().map(|i| permuted_json(i, rng)).collect::<Vec<_>>().join(", ")),
        other => other.to_string(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn digest_ignores_key_order(seed in any::<u64>(), lr_exp in 2i32..6, epochs in 1u32..30, shots in prop::option::of(1usize..10)) {
        let mut text = format!(
            r#"{{"dataset": "synthetic", "prompt_mode": "default_class", "learning_rate": 1e-{lr_exp}, "epochs": {epochs},
                "backends": {{"encoder": {{"kind": "toy", "parameters": "enc.json"}}}}"#
        );
        if let Some(n) = shots {
            text.push_str(&format!(r#", "shots": {{"n_shot": {n}, "seed": 3}}"#));
        }
        text.push('}');
        let config = ExperimentConfig::from_json_str(&text).unwrap();
        let full = serde_json::to_value(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shuffled = ExperimentConfig::from_json_str(&permuted_json(&full, &mut rng)).unwrap();
        prop_assert_eq!(shuffled.digest(), config.digest());
        let sparse = ExperimentConfig::from_json_str(&permuted_json(&serde_json::from_str(&text).unwrap(), &mut rng)).unwrap();
        prop_assert_eq!(sparse.digest(), config.digest());
    }
}
