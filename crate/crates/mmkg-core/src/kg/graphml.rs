//! GraphML snapshot of a knowledge graph.
//!
//! The writer is deterministic: elements appear in graph order, so a
//! canonicalized graph always serializes to the same bytes.

use super::KnowledgeGraph;

const NODE_KEYS: [(&str, &str); 3] = [
    ("d0", "entity_type"),
    ("d1", "description"),
    ("d2", "modality"),
];
const EDGE_KEYS: [(&str, &str, &str); 2] = [
    ("d3", "description", "string"),
    ("d4", "strength", "double"),
];

pub fn export_graphml(graph: &KnowledgeGraph) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\"\n");
    out.push_str("         xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\"\n");
    out.push_str(
        "         xsi:schemaLocation=\"http://graphml.graphdrawing.org/xmlns \
         http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd\">\n",
    );
    for (id, name) in NODE_KEYS {
        out.push_str(&format!(
            "  <key id=\"{id}\" for=\"node\" attr.name=\"{name}\" attr.type=\"string\"/>\n"
        ));
    }
    for (id, name, ty) in EDGE_KEYS {
        out.push_str(&format!(
            "  <key id=\"{id}\" for=\"edge\" attr.name=\"{name}\" attr.type=\"{ty}\"/>\n"
        ));
    }
    out.push_str("  <graph id=\"G\" edgedefault=\"undirected\">\n");
    for entity in graph.entities() {
        out.push_str(&format!("    <node id=\"{}\">\n", escape(&entity.name)));
        let modality = entity.modality.as_str();
        for (key, value) in [
            ("d0", entity.entity_type.as_str()),
            ("d1", entity.description.as_str()),
            ("d2", modality),
        ] {
            out.push_str(&format!(
                "      <data key=\"{key}\">{}</data>\n",
                escape(value)
            ));
        }
        out.push_str("    </node>\n");
    }
    for relation in graph.relations() {
        out.push_str(&format!(
            "    <edge source=\"{}\" target=\"{}\">\n",
            escape(&relation.source),
            escape(&relation.target)
        ));
        out.push_str(&format!(
            "      <data key=\"d3\">{}</data>\n",
            escape(&relation.description)
        ));
        out.push_str(&format!(
            "      <data key=\"d4\">{}</data>\n",
            relation.strength
        ));
        out.push_str("    </edge>\n");
    }
    out.push_str("  </graph>\n");
    out.push_str("</graphml>\n");
    out
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, GraphKind, Modality, Relation};

    #[test]
    fn empty_graph_has_no_nodes() {
        let doc = export_graphml(&KnowledgeGraph::new(GraphKind::Mmkg));
        assert!(!doc.contains("<node"));
        assert!(doc.starts_with("<?xml"));
    }

    #[test]
    fn counts_are_preserved() {
        let mut g = KnowledgeGraph::new(GraphKind::TextKg);
        g.upsert_entity(Entity::new("A", "t", "d", Modality::Text)).unwrap();
        g.upsert_entity(Entity::new("B", "t", "d", Modality::Text)).unwrap();
        g.add_relation(Relation::new("A", "B", "r", 5.0)).unwrap();
        let doc = export_graphml(&g);
        assert_eq!(doc.matches("<node id=").count(), 2);
        assert_eq!(doc.matches("<edge source=").count(), 1);
    }

    #[test]
    fn special_characters_are_escaped() {
        let mut g = KnowledgeGraph::new(GraphKind::TextKg);
        g.upsert_entity(Entity::new(
            "R&D <LAB>",
            "org",
            "says \"hi\" & 'bye'",
            Modality::Text,
        ))
        .unwrap();
        let doc = export_graphml(&g);
        assert!(doc.contains("R&amp;D &lt;LAB&gt;"));
        assert!(doc.contains("&quot;hi&quot; &amp; &apos;bye&apos;"));
        assert!(!doc.contains("<LAB>"));
    }
}
