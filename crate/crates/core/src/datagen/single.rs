//! Single-edit instance recipes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngExt;

use super::similarity::SimilarityTable;
use super::templates::{Template, TemplateSet};
use super::{DatagenError, ModificationInstance};
use crate::graph::{apply_edit, EditKind, EditOp, SceneGraph};
use crate::rng::Rng;

/// Source = `g`, target = `g` without `node`.
pub fn delete_at(g: &SceneGraph, node: usize, template: &Template) -> Result<ModificationInstance, DatagenError> {
    let op = EditOp::delete(g.label(node));
    let target = apply_edit(g, &op, node)?;
    Ok(ModificationInstance {
        source: g.clone(),
        query: template.render(g.label(node), None),
        target,
        ops: vec![EditKind::Delete],
        edits: vec![op],
    })
}

/// Source = `g` without `node`, target = `g`.
pub fn insert_at(g: &SceneGraph, node: usize, template: &Template) -> Result<ModificationInstance, DatagenError> {
    let source = apply_edit(g, &EditOp::delete(g.label(node)), node)?;
    let op = EditOp::inverse_of_delete(g, node)?;
    Ok(ModificationInstance {
        source,
        query: template.render(g.label(node), None),
        target: g.clone(),
        ops: vec![EditKind::Insert],
        edits: vec![op],
    })
}

pub fn substitute_at(
    g: &SceneGraph,
    node: usize,
    replacement: &str,
    template: &Template,
) -> Result<ModificationInstance, DatagenError> {
    let op = EditOp::substitute(g.label(node), replacement);
    let target = apply_edit(g, &op, node)?;
    Ok(ModificationInstance {
        source: g.clone(),
        query: template.render(g.label(node), Some(replacement)),
        target,
        ops: vec![EditKind::Substitute],
        edits: vec![op],
    })
}

fn require_two(g: &SceneGraph) -> Result<(), DatagenError> {
    if g.len() < 2 {
        return Err(DatagenError::TooSmall(g.len()));
    }
    Ok(())
}

pub fn gen_delete(g: &SceneGraph, templates: &TemplateSet, rng: &mut Rng) -> Result<ModificationInstance, DatagenError> {
    require_two(g)?;
    let node = rng.random_range(0..g.len());
    let template = templates.choose(EditKind::Delete, rng)?;
    delete_at(g, node, template)
}

pub fn gen_insert(g: &SceneGraph, templates: &TemplateSet, rng: &mut Rng) -> Result<ModificationInstance, DatagenError> {
    require_two(g)?;
    let node = rng.random_range(0..g.len());
    let template = templates.choose(EditKind::Insert, rng)?;
    insert_at(g, node, template)
}

/// Visits nodes in random order and substitutes the first one that has a
/// similar label, drawn uniformly from its list.
pub fn gen_substitute(
    g: &SceneGraph,
    sim: &SimilarityTable,
    templates: &TemplateSet,
    rng: &mut Rng,
) -> Result<ModificationInstance, DatagenError> {
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.shuffle(rng);
    let node = order
        .into_iter()
        .find(|&i| !sim.similar(g.label(i)).is_empty())
        .ok_or(DatagenError::NoSimilarLabel)?;
    let replacement = sim.similar(g.label(node)).choose(rng).expect("nonempty").clone();
    let template = templates.choose(EditKind::Substitute, rng)?;
    substitute_at(g, node, &replacement, template)
}

/// One edit whose kind is drawn uniformly from `kinds`.
pub fn gen_single(
    g: &SceneGraph,
    kinds: &[EditKind],
    templates: &TemplateSet,
    sim: &SimilarityTable,
    rng: &mut Rng,
) -> Result<ModificationInstance, DatagenError> {
    let kind = *kinds.choose(rng).ok_or_else(|| DatagenError::BadConfig("no edit kinds".into()))?;
    match kind {
        EditKind::Delete => gen_delete(g, templates, rng),
        EditKind::Insert => gen_insert(g, templates, rng),
        EditKind::Substitute => gen_substitute(g, sim, templates, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::filter;
    use crate::rng;

    fn fig1() -> SceneGraph {
        SceneGraph::from_parts(
            &["boy", "shirt", "young", "black"],
            &[(0, 1, "in"), (0, 2, "attribute"), (1, 3, "attribute")],
        )
        .unwrap()
    }

    fn template(kind: EditKind, p: &str) -> Template {
        Template::new(kind, p).unwrap()
    }

    #[test]
    fn delete_young() {
        let inst = delete_at(&fig1(), 2, &template(EditKind::Delete, "remove xx")).unwrap();
        assert_eq!(inst.query, "remove young");
        let expect =
            SceneGraph::from_parts(&["boy", "shirt", "black"], &[(0, 1, "in"), (1, 2, "attribute")]).unwrap();
        assert_eq!(inst.target, expect);
        assert_eq!(inst.source, fig1());
        assert!(filter(&inst));
    }

    #[test]
    fn delete_from_pair_and_cut_vertex() {
        let pair = SceneGraph::from_parts(&["a", "b"], &[(0, 1, "r")]).unwrap();
        let inst = delete_at(&pair, 1, &template(EditKind::Delete, "drop xx")).unwrap();
        assert_eq!(inst.target, SceneGraph::from_parts(&["a"], &[]).unwrap());

        let path = SceneGraph::from_parts(&["a", "b", "c"], &[(0, 1, "r"), (1, 2, "r")]).unwrap();
        let cut = delete_at(&path, 1, &template(EditKind::Delete, "drop xx")).unwrap();
        assert!(!filter(&cut));
    }

    #[test]
    fn insert_black_is_inverse_of_delete() {
        let t_ins = template(EditKind::Insert, "I want xx");
        let inst = insert_at(&fig1(), 3, &t_ins).unwrap();
        assert_eq!(inst.query, "I want black");
        assert_eq!(
            inst.source,
            SceneGraph::from_parts(&["boy", "shirt", "young"], &[(0, 1, "in"), (0, 2, "attribute")]).unwrap()
        );
        let del = delete_at(&fig1(), 3, &template(EditKind::Delete, "remove xx")).unwrap();
        assert_eq!(inst.source, del.target);
        assert_eq!(inst.target, del.source);

        // boy has two incident edges; both vanish from the source
        let inst = insert_at(&fig1(), 0, &t_ins).unwrap();
        assert_eq!(inst.source.edges().len(), 1);
    }

    #[test]
    fn substitute_boy() {
        let inst = substitute_at(&fig1(), 0, "man", &template(EditKind::Substitute, "change xx to yy")).unwrap();
        assert_eq!(inst.query, "change boy to man");
        assert_eq!(inst.target.edges(), inst.source.edges());
        assert_eq!(inst.target.nodes()[0], "man");
    }

    #[test]
    fn sampled_recipes() {
        let set = TemplateSet::default();
        let sim = SimilarityTable::builtin();
        let mut r = rng::seeded(3);
        for _ in 0..50 {
            let d = gen_delete(&fig1(), &set, &mut r).unwrap();
            assert_eq!(d.target.len(), 3);
            let i = gen_insert(&fig1(), &set, &mut r).unwrap();
            assert_eq!(i.source.len(), 3);
            let s = gen_substitute(&fig1(), &sim, &set, &mut r).unwrap();
            let changed = s.source.nodes().iter().zip(s.target.nodes()).filter(|(a, b)| a != b).count();
            assert_eq!(changed, 1);
        }
        let single = SceneGraph::from_parts(&["a"], &[]).unwrap();
        assert!(matches!(gen_delete(&single, &set, &mut r), Err(DatagenError::TooSmall(1))));
        assert!(matches!(gen_insert(&single, &set, &mut r), Err(DatagenError::TooSmall(1))));
        assert!(matches!(
            gen_substitute(&fig1(), &SimilarityTable::new(), &set, &mut r),
            Err(DatagenError::NoSimilarLabel)
        ));
    }
}
