from typing import Optional, List, Dict, Tuple, FrozenSet, Literal
import enum
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, field_serializer, model_validator


UNIT_NORM_TOLERANCE = 1e-6

EdgeKey = Tuple[str, str, str]      # (subject_id, relation, object_id) after canonicalization


def _check_unit_or_zero(values):
    """
    raises ValueError unless the vector has norm 0 or norm 1 within UNIT_NORM_TOLERANCE
    """
    norm = math.sqrt(sum(v * v for v in values))
    if norm != 0.0 and abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
        raise ValueError('embedding norm %.9f is neither 0 nor 1 within %g' % (norm, UNIT_NORM_TOLERANCE))


###
##  Corpus
###

class CorpusRecord(BaseModel):
    """
    One line of a JSON Lines corpus file, or one abstract returned by efetch.
    """
    id: str = Field(description='Opaque source identifier, e.g. a PubMed id.')
    title: Optional[str] = Field(default=None, description='Optional article title.')
    abstract: str = Field(description='Abstract text.')

    def raw_text(self) -> str:
        if self.title:
            return f"{self.title} {self.abstract}"
        return self.abstract


class Document(BaseModel):
    model_config = ConfigDict(frozen=True)

    source_id: str       = Field(description='Opaque source identifier (e.g. a PubMed id).')
    raw_text: str        = Field(description='Title and abstract as ingested.')
    normalized_text: str = Field(description='Output of normalize_text over raw_text.')
    digest: str          = Field(description='Hex SHA-256 of the UTF-8 bytes of normalized_text.')


class HashMemory(BaseModel):
    """
    The monotonic memory of previously seen abstract digests.
    """
    seen: FrozenSet[str] = Field(default=frozenset(), description='Every digest observed so far.')
    generation: int = Field(default=0, ge=0, description='Number of committed dedup batches.')

    @field_serializer('seen')
    def _seen(self, seen):
        return sorted(seen)


class SearchQuery(BaseModel):
    model_config = ConfigDict(frozen=True)

    text: str  = Field(description='Literature search query string.')
    depth: int = Field(ge=0, description='Expansion depth; 0 is the seed query.')


###
##  Extraction
###

DEFAULT_RELATIONS = ("EXHIBITS_FEATURE", "ASSOCIATED_WITH", "INDICATES", "GRADED_AS", "LOCATED_IN")


class RelationSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    relations: Tuple[str, ...] = Field(default=DEFAULT_RELATIONS, description='Ordered relation names.')

    @field_validator('relations')
    def _relations(cls, v):
        if not v:
            raise ValueError('relation schema must not be empty')
        if len(set(v)) != len(v):
            raise ValueError('relation names must be unique')
        return v

    def __contains__(self, relation):
        return relation in self.relations


class EvidenceTriple(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject: str                = Field(description='Subject entity surface form.')
    relation: str               = Field(description='Relation name from the schema.')
    object: str                 = Field(description='Object entity surface form.')
    confidence: float           = Field(ge=0.0, le=1.0, description='Extractor confidence.')
    embedding: Tuple[float, ...] = Field(description='Unit-or-zero embedding of the rendered triple.')
    source_digest: str          = Field(description='Digest of the document this triple came from.')

    @field_validator('embedding')
    def _embedding(cls, v):
        _check_unit_or_zero(v)
        return v

    def rendered(self) -> str:
        return f"{self.subject} {self.relation} {self.object}"


class ExtractionStatus(str, enum.Enum):
    ok     = "ok"
    failed = "extraction-failed"


class ExtractionOutcome(BaseModel):
    source_digest: str             = Field(description='The document the outcome belongs to.')
    status: ExtractionStatus       = Field(default=ExtractionStatus.ok)
    triples: List[EvidenceTriple]  = Field(default_factory=list)
    dropped: int                   = Field(default=0, ge=0, description='Response items discarded as malformed.')
    error: Optional[str]           = Field(default=None, description='Why extraction failed, if it did.')


###
##  Knowledge graph
###

class EntityType(str, enum.Enum):
    disease = "Disease"
    feature = "Feature"
    other   = "Other"


class Entity(BaseModel):
    canonical_id: str        = Field(description='Normalized canonical form.')
    surface_forms: FrozenSet[str] = Field(default=frozenset(), description='Every surface form mapped here by phi.')
    entity_type: EntityType  = Field(default=EntityType.feature)

    @field_serializer('surface_forms')
    def _surface_forms(self, surface_forms):
        return sorted(surface_forms)


class Evidence(BaseModel):
    model_config = ConfigDict(frozen=True)

    confidence: float            = Field(ge=0.0, le=1.0)
    embedding: Tuple[float, ...] = Field(description='Embedding of the supporting instance.')
    source_digest: str           = Field(description='Digest of the supporting abstract.')


class Edge(BaseModel):
    model_config = ConfigDict(frozen=True)

    subject_id: str          = Field(description='Canonical subject id.')
    relation: str            = Field(description='Relation name.')
    object_id: str           = Field(description='Canonical object id.')
    fused_weight: float      = Field(ge=0.0, le=1.0, description='Noisy-or fusion of the evidence list.')
    evidence: List[Evidence] = Field(min_length=1, description='Supporting instances in arrival order.')

    @property
    def key(self) -> EdgeKey:
        return (self.subject_id, self.relation, self.object_id)

    def rendered(self) -> str:
        return f"{self.subject_id} {self.relation} {self.object_id}"


class FusionParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=0.9, gt=0.0, le=1.0, description='Global scaling coefficient.')
    F: float     = Field(default=1.0, gt=0.0, description='Embedding-consistency penalty.')


class GraphSnapshot(BaseModel):
    """
    On-disk form of a knowledge graph.  Psi is rebuilt on load and never stored.
    """
    model_config = ConfigDict(extra="forbid")

    version: int
    fusion_params: FusionParams
    entities: List[Entity]
    edges: List[Edge]
    phi: Dict[str, str]
    disease_lexicon: List[str]


class GraphStats(BaseModel):
    entities: int
    edges: int
    evidence: int                 = Field(description='Total evidence instances over all edges.')
    diseases: int                 = Field(description='Number of disease nodes.')
    relations: Dict[str, int]     = Field(description='Edge count per relation.')
    weight_histogram: Dict[str, int] = Field(description='Edge count per fused weight decile.')
    fingerprint: str              = Field(description='Content tag of the snapshot.')


class FeatureLookup(BaseModel):
    feature: str      = Field(description='The canonical id that was looked up.')
    known: bool       = Field(description='False when the id is not an entity of the graph.')
    edges: List[Edge] = Field(default_factory=list, description='Edges with the feature as subject or object.')


class Subgraph(BaseModel):
    features: List[str]   = Field(description='Requested feature ids that exist in the graph.')
    entities: List[Entity] = Field(description='Endpoints of the selected edges.')
    edges: List[Edge]     = Field(description='Union of psi over the requested features.')
    diseases: List[str]   = Field(description='Disease nodes among the endpoints.')


###
##  Activation
###

class ActivationMode(str, enum.Enum):
    static  = "static"
    dynamic = "dynamic"
    fused   = "fused"


class ActivationConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    epsilon: float                 = Field(default=1e-8, ge=0.0)
    cap_dynamic: int               = Field(default=5, ge=1)
    cap_static: int                = Field(default=5, ge=1)
    mask: Optional[np.ndarray]     = Field(default=None, description='N entries, 0 or -inf (masked).')
    projection_query: Optional[np.ndarray]  = Field(default=None, description='d x d, identity when absent.')
    projection_memory: Optional[np.ndarray] = Field(default=None, description='d x d, identity when absent.')
    relevance_floor: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class ActivationResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    mode: ActivationMode
    indices: List[int]           = Field(description='Selected bank rows, in result order.')
    scores: List[float]          = Field(description='Relevance of each selected row in its own mode.')
    sources: List[ActivationMode] = Field(description='Mode that scored each entry.')
    wm_rows: np.ndarray          = Field(description='len(indices) x d relevance-scaled rows.')
    provenance: Dict[int, EdgeKey] = Field(default_factory=dict)
    distribution: Optional[np.ndarray] = Field(default=None, description='Full pre-selection softmax (dynamic only).')
    degenerate: bool             = Field(default=False, description='True when the query was zero and selection fell back to index order.')


class ActivationRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tokens: Optional[List[List[float]]] = Field(default=None, description='T x d query token matrix.')
    text: Optional[str]         = Field(default=None, description='Free text, embedded one row per sentence.')
    mode: ActivationMode        = Field(default=ActivationMode.fused)
    cap_dynamic: Optional[int]  = Field(default=None, ge=1)
    cap_static: Optional[int]   = Field(default=None, ge=1)
    exclude: List[int]          = Field(default_factory=list, description='Bank rows to suppress.')
    restrict_feature: Optional[str] = Field(default=None, description='Only activate edges touching this entity.')

    @model_validator(mode='after')
    def _query(self):
        if (self.tokens is None) == (self.text is None):
            raise ValueError('exactly one of tokens or text must be given')
        return self


class ActivationEntry(BaseModel):
    index: int
    score: float
    source: ActivationMode
    edge: EdgeKey
    triple: str
    fused_weight: float


class ActivationResponse(BaseModel):
    mode: ActivationMode
    degenerate: bool
    entries: List[ActivationEntry]
    wm_shape: Tuple[int, int]
    augmented_shape: Tuple[int, int]
    bank: str = Field(description='Tag of the snapshot the bank was built from.')


###
##  Pipeline
###

class PipelineConfig(BaseModel):
    """
    Flat, JSON-serializable pipeline configuration.  Unknown keys are rejected.
    """
    model_config = ConfigDict(extra="forbid")

    tau: float           = Field(default=0.5, gt=0.0, lt=1.0, description='Minimum triple confidence (inclusive).')
    alpha: float         = Field(default=0.9, gt=0.0, le=1.0, description='Fusion scaling coefficient.')
    penalty_f: float     = Field(default=1.0, gt=0.0, description='Fusion embedding-consistency penalty F.')
    dim: int             = Field(default=256, ge=2, description='Embedding dimension d.')
    epsilon: float       = Field(default=1e-8, gt=0.0, description='Query normalization constant.')
    cap_dynamic: int     = Field(default=5, ge=1, description='Dynamic activation token cap.')
    cap_static: int      = Field(default=5, ge=1, description='Static activation token cap.')
    relevance_floor: Optional[float] = Field(default=None, ge=0.0, le=1.0, description='Drop fused entries below this score.')
    max_depth: int       = Field(default=2, ge=0, description='Query expansion depth cap.')
    query_budget: int    = Field(default=100, ge=1, description='Global cap on issued literature queries.')
    retmax: int          = Field(default=20, ge=1, description='Abstracts fetched per query.')
    disease_lexicon: Optional[str] = Field(default=None, description='Path of the disease lexicon file.')
    synonym_table: Optional[str]   = Field(default=None, description='Path of the synonym table JSON.')
    extractor: Literal["mock", "remote"] = Field(default="mock")
    embedding: Literal["builtin"]        = Field(default="builtin")
    llm_endpoint: Optional[str] = Field(default=None, description='URL of the remote extractor.')
    llm_retries: int     = Field(default=3, ge=1, description='Attempts per document against the remote extractor.')
    request_timeout: float = Field(default=30.0, gt=0.0, description='Seconds before an HTTP request times out.')
    ncbi_rate_limit: float = Field(default=3.0, gt=0.0, description='Requests per second against NCBI without an API key.')
    workers: Optional[int] = Field(default=None, ge=1, description='Thread pool size; cpu count when unset.')

    @model_validator(mode='after')
    def _remote(self):
        if self.extractor == "remote" and not self.llm_endpoint:
            raise ValueError('extractor "remote" requires llm_endpoint')
        return self

    def fusion_params(self) -> FusionParams:
        return FusionParams(alpha=self.alpha, F=self.penalty_f)

    def activation_config(self, **overrides) -> ActivationConfig:
        """
        overrides replace the configured values; ones given as None are ignored
        """
        fields = dict(epsilon=self.epsilon,
                      cap_dynamic=self.cap_dynamic,
                      cap_static=self.cap_static,
                      relevance_floor=self.relevance_floor)
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return ActivationConfig(**fields)


class BuildReport(BaseModel):
    docs_seen: int = 0
    deduped: int = 0
    triples_extracted: int = 0
    retained: int = 0
    dropped: int = Field(default=0, description='Triples below tau or with a rejected entity.')
    malformed: int = Field(default=0, description='Extractor response items that were not triples.')
    failed_documents: int = 0
    queries_issued: int = 0
    edges: int = 0
    entities: int = 0
    retained_relations: Dict[str, int] = Field(default_factory=dict)
    retained_confidences: Dict[str, int] = Field(default_factory=dict)
