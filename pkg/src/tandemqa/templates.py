"""Prompt templates and deterministic slot rendering.

Each template is plain text with ``{slot}`` markers. Rendering is a single
pass, so bound values may themselves contain braces without being re-expanded.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

from .errors import MissingBinding

_SLOT_RE = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    body: str

    @property
    def slots(self) -> frozenset[str]:
        return frozenset(_SLOT_RE.findall(self.body))


_BODIES = {
    "relevant_columns": """\
Given column descriptions, Table and Question return a list of columns that can be
relevant to the solving the question (even if slightly relevant) given the table
name and table:
table name: {table_name}

table: {table}
Question: {question}

Example output: [ 'Score', 'Driver']
Instructions:
1. Do not provide any explanations, just give the cols as a list
2. The list will be used to filter the table dataframe directly so take care of that

Output:
""",
    "column_description": """\
Give me the column name, data type, formatting that needs to be done, column
descriptions in short for the given table and question. The descriptions should be
useful in planning steps that solve the question asked on that table. Also, give a
small description of the table using table name and table data given.
Table:
table name: {table_name}
{table}
Question: {question}
""",
    "planning": """\
I need a step-by-step plan in plain text for solving a question, given column
descriptions and table rows. Follow these guidelines:
Begin analyzing the question to categorize tasks that require only SQL capabilities
(like straightforward data formatting, mathematical operations, basic aggregations)
and those that need LLM assistance (like summarization, text interpretation, or
answering open-ended queries).
MySQL Query Generation: For parts of the question that involve formatting of column
data type, filtering and mathematical or analytical tasks, generate SQL query code
to answer them directly, without using an LLM call.
LLM-Dependent Task Identification: For tasks that SQL cannot inherently
perform, specify the columns or portions of rows where LLM calls are needed. Add an
extra column in the result set to store the LLM output for each row in the filtered
data subset.
{examples}

Solve for this:
Table:
table name: {table_name}
{table}
Question: {question}
{description}
Only give the step-by-step plan and remove any other explanations or code.
Output format:
Step 1: SQL
Step 2: Either SQL or LLM
Step 3: ...
Step 4: ...
""",
    "verify_plan": """\
Suppose you are an expert planner verification agent.
Verify if the given plan will be able to answer the Question asked on this table.
Table name: {table_name}
Table: {table}
Column descriptions: {description}
Question to Answer: {question}
Old Plan: {plan}
Is the given plan correct to answer the Question asked on this table (check format
issues and reasoning steps) should be able to guide the LLM to write correct code
and get correct result.
If the plan is not correct, provide better plan detailed on what needs to be done
handling all kinds of values in the column.
- Check if the MySQL step logic adheres to the column format. (Performs calculations
and formatting and filtering in the table)
- The LLM step's logic will help in getting the correct answer.
If the original plan is correct then return that plan.

Do not provide code or other explanations, only the new plan.
Output format:
Step 1: Either SQL or LLM - ...
Step 2: SQL or LLM - ...
Step 3: SQL ...

As given in original plan.
""",
    "code_execution": """\
MySQL_Code_Generation: For parts of the question that involve data
formatting, data manipulations such as filtering, grouping, aggregations, and
creating new tables. Generate optimized MySQL code to
answer those parts directly without using an LLM.

LLM-Dependent Tasks Identification: For tasks that SQL cannot inherently perform
that require sentiment analysis, logical inferences, or questions that involve
interpreting text data, specify only that 1 column where LLM calls are needed. Add
an extra column in the table that stores the LLM output for each row in the filtered
data subset.

Instructions:
1. Store the output at each step by creating a new table. Use this new table for the
next steps.
2. The code for MySQL should handle all values in the column (formatting and
filtering). New columns
from previous LLM steps can be assumed present in table.
3. Don't give any other explanations, only MySQL and LLM steps as the given plan.

Then, Only give step (SQL or LLM) that is needed -
The Output format example -
Step_1 - SQL: MySQL code, table name to be used in the next query
Step_2 - LLM:
- Reason: Why we need to use LLM
- Table name:
- original column to be used:
- LLM prompt: The prompt that user can use to solve the problem
- New column name:
Step_3 - SQL: MySQL code, table name to be used in the next query
Step_4 - ...
Step_5 - ...

LLM step format should be the same.
Solve for this question, given table and step by step plan as a reference:
Table name: {table_name}
Schema: {schema}
Column Descriptions: {description}
Table: {table}
Question: {question}
Plan: {plan}

First check if taking above Plan will give the desired output.
Give me code for solving the question, and no other explanations. Keep in mind the
column data formats (string to appropriate data type, removing extra character, Null
values) while writing Mysql code.
""",
    "llm_step": """\
Given a column and step you need to perform on it -
Column: {column}
Step to solve the question: {step_prompt}
Question: {question}

Instructions:
- Do not provide any explanation and Return only a list (separate values by '#')
that can be added
to a dataframe as a new column in a dataframe.
- Do not create a column name already present in the table. (duplicate column)
- Any value should not be more than 3 words (or each value should be as short as
possible).
- Size of output list Should be same as input list.
""",
    "answer_extraction": """\
Table: {table_name}
{table}
Question: {question}

Answer the question given the table in as short as possible.
If the table has just one column or value consider that as the answer given the
column name.
Just provide the answer, do not provide any other information.
""",
    "answer_format": """\
Table: {table_name}
{table}
Question: {question}

You will be given Answer and Gold Answer, you have to Convert the answer into a
format of gold answer given above, if the content or meaning is same (semantically
same) they should be same.

Few examples of conversion for your understanding:
1. answer: ITA, gold answer: Italy. Reasoning- ITA is country code of Italy hence ITA and Italy are same and you can convert ITA to Italy.
    Your Output: Italy
2. answer: 17, gold answer: 17 years. Reasoning- 17 of answer is same as 17 years of the gold answer in the given context of question.
    Your Output: 17 years
3. answer : 10, gold answer: 10. Reasoning- Since, both values are already same no conversion is needed.
    Your Output: 10
4. answer : 0, gold answer: 5. Reasoning- Since, both values are semantically not same no conversion is needed for the answer.
    Your Output: 0
5. answer : The answer is not present in the table. , gold answer: 5. Reasoning- Since, both values are semantically not same no convertion is needed for the answer.
    Your Output: The answer is not present in the table.

Answer: {answer}
Gold Answer: {gold_answer}
Your Output:
""",
    "plan_optimization": """\
You are an expert in SQL and plan optimization. Your task is to optimize the given
SQL plan while ensuring it correctly answers the given question. Use the following
optimization strategies, but only if they maintain correctness:

SQL Merge: Merge sequential SQL steps where possible (e.g., combining filtering,
aggregation, and sorting in one query).
SQL Reordering: Reorder SQL steps to filter early before applying computationally
expensive operations like LLM processing.
LLM Merge: Merge sequential LLM steps where the operation is on the same column.
Given Information: {question}
Plan: {plan}
""",
    # There is no published wording for paragraph filtering; this template
    # covers the pre-processing call that trims external text to what the
    # question and table actually need.
    "paragraph_filter": """\
You are given a paragraph of background text, a table, and a question.
Return only the sentences from the paragraph that are relevant to answering
the question using the table. If nothing is relevant, return an empty line.
Do not add explanations or rewrite the sentences.

Table: {table}
Question: {question}
Paragraph: {paragraph}
""",
}

TEMPLATES: dict[str, PromptTemplate] = {
    tid: PromptTemplate(tid, body) for tid, body in _BODIES.items()
}

TEMPLATE_IDS = tuple(TEMPLATES)


def render_prompt(template_id: str, bindings: Mapping[str, str]) -> str:
    """Substitute every slot of the template; MissingBinding if one is unbound."""
    template = TEMPLATES[template_id]

    def repl(match: re.Match) -> str:
        slot = match.group(1)
        if slot not in bindings:
            raise MissingBinding(slot)
        return str(bindings[slot])

    return _SLOT_RE.sub(repl, template.body)
