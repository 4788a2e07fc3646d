"""Table question answering via interleaved SQL and LLM plan steps."""

from .errors import TandemError
from .gateway import (
    CallLog,
    EchoBackend,
    Gateway,
    LlmRequest,
    LlmResponse,
    MapperBackend,
    ScriptedBackend,
    generate_column_chunked,
    generate_columns_batched,
    make_backend,
    parse_hash_list,
)
from .executor import ExecutionTrace, adapt_sql, execute_plan, write_trace
from .optimizer import (
    OptimizationStats,
    check_equivalence,
    llm_optimize,
    optimize,
)
from .pipeline import PipelineConfig, QaResult, answer_question
from .plan import (
    DraftStep,
    LlmStep,
    Plan,
    SqlStep,
    parse_draft_plan,
    parse_executable_plan,
    serialize_plan,
    validate_plan,
)
from .evaluation import (
    EvalRecord,
    EvalReport,
    classify_error,
    load_dataset,
    normalize_answer,
    relaxed_exact_match,
    run_benchmark,
)
from .tables import (
    Column,
    RenameMap,
    Table,
    load_table,
    load_table_file,
    project_columns,
    render_for_prompt,
    sanitize_schema,
)

__version__ = "0.1.0"
