from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from config import SplitterConfig


class PreprocessState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    # corpus triples; relations may be empty for unannotated input
    abstracts: List[str] = []
    entities: List[str] = []
    relations: List[str] = []
    splitter: SplitterConfig = Field(default_factory=SplitterConfig)
    drop_rare: bool = True

    corpus: Optional[Any] = None  # corpus.models.Corpus
    flats: Dict[str, Any] = {}  # pmid -> FlatText
    sentences: Dict[str, List[Any]] = {}  # pmid -> SentenceSpan list
    pairs: List[Any] = []  # CandidatePair
    examples: List[Any] = []  # RelationExample
    stats: Optional[Any] = None  # PreprocessStats
