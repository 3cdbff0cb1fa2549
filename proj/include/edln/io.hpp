#pragma once

#include "edln/metrics.hpp"
#include "edln/theory.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace edln {

using Json = nlohmann::json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matrices are nested row-major arrays. Doubles are written in their
/// shortest round-trip form, so a save/load cycle is bit exact.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j);

/// {"format": "edln.network", "depth", "dims", "m_in", "m_out", "weights"}
Json network_to_json(const EdlnNetwork& net);
EdlnNetwork network_from_json(const Json& j);

/// {"format": "edln.data_model", "input_dim", "output_dim", "seed", "v_star",
///  "sigma_x", "sigma_eps", "views": {tag: {"z", "phi"?, "feature_noise"?}}}
Json data_model_to_json(const DataModel& dm);
DataModel data_model_from_json(const Json& j);

Json solution_to_json(const ClosedFormSolution& sol);
Json balance_report_to_json(const BalanceReport& report);

std::string read_text_file(const std::filesystem::path& path);
/// Creates parent directories as needed.
void write_text_file(const std::filesystem::path& path, const std::string& text);

void save_network(const EdlnNetwork& net, const std::filesystem::path& path);
EdlnNetwork load_network(const std::filesystem::path& path);
void save_data_model(const DataModel& dm, const std::filesystem::path& path);
DataModel load_data_model(const std::filesystem::path& path);

/// One row per sample: x_1.., then per tag x_<tag>_k.. and y_<tag>_k...
std::string batch_csv(const PairedBatch& batch);

/// interface,gradient_balance,layer_condition,rowcol
std::string balance_csv(const BalanceReport& report);

/// Heat-map table: header "layer_a,b_<j>...", one row per layer of A.
std::string alignment_csv(const Matrix& scores, const std::vector<int>& layers_a,
                          const std::vector<int>& layers_b);

/// Decimal text with 17 significant digits; "nan"/"inf" for non-finite.
std::string format_double(double v);

}  // namespace edln
