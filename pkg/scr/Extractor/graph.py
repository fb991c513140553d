from typing import List, Optional, Sequence, Tuple

from langgraph.graph import END, StateGraph

from config import SplitterConfig
from nodes import generate_pairs, label_pairs, load_documents, split_documents
from preprocess import PreprocessStats, RelationExample
from state import PreprocessState


def route_after_pairs(state: PreprocessState):
    """Label only when the corpus produced candidate pairs, else end."""
    return "label" if state.pairs else END


workflow = StateGraph(PreprocessState)
workflow.add_node("load", load_documents)
workflow.add_node("split", split_documents)
workflow.add_node("pairs", generate_pairs)
workflow.add_node("label", label_pairs)

workflow.set_entry_point("load")
workflow.add_edge("load", "split")
workflow.add_edge("split", "pairs")
workflow.add_conditional_edges(
    "pairs",
    route_after_pairs,
    {
        "label": "label",
        END: END
    }
)
workflow.add_edge("label", END)

graph_app = workflow.compile()


def run_preprocess(
    abstracts: Sequence[str],
    entities: Sequence[str],
    relations: Sequence[str] = (),
    splitter: Optional[SplitterConfig] = None,
    drop_rare: bool = True,
) -> Tuple[List[RelationExample], PreprocessStats]:
    """Run the preprocessing graph over one or more corpus triples."""
    result = graph_app.invoke(
        PreprocessState(
            abstracts=list(abstracts),
            entities=list(entities),
            relations=list(relations),
            splitter=splitter or SplitterConfig(),
            drop_rare=drop_rare,
        )
    )
    return list(result.get("examples") or []), result["stats"]
