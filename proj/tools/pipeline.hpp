#pragma once

#include "config.hpp"

#include "mia/error.hpp"

#include <string>
#include <vector>

namespace mia::cli {

// Extra inputs for `analyze`; all optional.
struct AnalyzeInputs {
    std::vector<std::string> attention;  // ATTN dump files
    std::vector<std::string> replaced;   // summary-replaced twins, same order as attention
    std::vector<std::string> relevant;   // chunk ids for MCEA
    std::vector<std::string> noise;
    std::vector<std::string> hidden;  // "qid=path" HIDN dumps
};

void run_ingest(const PipelineConfig& cfg);
void run_mindscape(const PipelineConfig& cfg);
void run_index(const PipelineConfig& cfg);
void run_annotate(const PipelineConfig& cfg);
void run_train_adapter(const PipelineConfig& cfg);
void run_retrieve(const PipelineConfig& cfg);
void run_answer(const PipelineConfig& cfg);
void run_eval(const PipelineConfig& cfg);
void run_analyze(const PipelineConfig& cfg, const AnalyzeInputs& in);
void run_export_sft(const PipelineConfig& cfg);

// 1 io, 2 config, 3 upstream missing, 4 gateway failure, 5 invariant or data error.
int exit_code_for(ErrorCode code);

// File-name-safe form of a document id.
std::string file_stem(const std::string& doc_id);

}  // namespace mia::cli
