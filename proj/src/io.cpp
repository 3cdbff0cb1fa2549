#include "edln/io.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace edln {

namespace {

const Json& field(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("missing field '") + key + "'");
  return *it;
}

void expect_format(const Json& j, const std::string& format) {
  if (!j.is_object() || !j.contains("format") || j["format"] != format)
    throw FormatError("expected a document of format '" + format + "'");
}

}  // namespace

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("matrix must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Json& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols)
      throw FormatError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const Json& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw FormatError("matrix entries must be numbers");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

Json network_to_json(const EdlnNetwork& net) {
  Json j;
  j["format"] = "edln.network";
  j["depth"] = net.depth();
  j["dims"] = net.layer_dims();
  j["m_in"] = matrix_to_json(net.m_in());
  j["m_out"] = matrix_to_json(net.m_out());
  j["weights"] = Json::array();
  for (const Matrix& w : net.weights()) j["weights"].push_back(matrix_to_json(w));
  return j;
}

EdlnNetwork network_from_json(const Json& j) {
  expect_format(j, "edln.network");
  std::vector<Matrix> weights;
  for (const Json& w : field(j, "weights")) weights.push_back(matrix_from_json(w));
  if (field(j, "depth").get<int>() != static_cast<int>(weights.size()))
    throw FormatError("depth does not match the number of weight matrices");
  EdlnNetwork net(matrix_from_json(field(j, "m_in")), matrix_from_json(field(j, "m_out")),
                  std::move(weights));
  if (j.contains("dims") && j["dims"].get<std::vector<Eigen::Index>>() != net.layer_dims())
    throw FormatError("dims do not match the stored matrices");
  return net;
}

Json data_model_to_json(const DataModel& dm) {
  Json j;
  j["format"] = "edln.data_model";
  j["input_dim"] = dm.input_dim;
  j["output_dim"] = dm.output_dim;
  j["seed"] = dm.seed;
  j["v_star"] = matrix_to_json(dm.v_star);
  j["sigma_x"] = matrix_to_json(dm.sigma_x);
  j["sigma_eps"] = matrix_to_json(dm.sigma_eps);
  Json views = Json::object();
  for (const auto& tag : dm.tags()) {
    Json v;
    v["z"] = matrix_to_json(dm.view(tag));
    if (auto it = dm.label_transforms.find(tag); it != dm.label_transforms.end())
      v["phi"] = matrix_to_json(it->second);
    if (auto it = dm.heterogeneity.find(tag); it != dm.heterogeneity.end())
      v["feature_noise"] = matrix_to_json(it->second);
    views[tag] = std::move(v);
  }
  j["views"] = std::move(views);
  return j;
}

DataModel data_model_from_json(const Json& j) {
  expect_format(j, "edln.data_model");
  DataModel dm;
  dm.input_dim = field(j, "input_dim").get<Eigen::Index>();
  dm.output_dim = field(j, "output_dim").get<Eigen::Index>();
  dm.seed = j.value("seed", std::uint64_t{0});
  dm.v_star = matrix_from_json(field(j, "v_star"));
  dm.sigma_x = matrix_from_json(field(j, "sigma_x"));
  dm.sigma_eps = matrix_from_json(field(j, "sigma_eps"));
  for (const auto& [tag, v] : field(j, "views").items()) {
    dm.view_transforms[tag] = matrix_from_json(field(v, "z"));
    if (v.contains("phi")) dm.label_transforms[tag] = matrix_from_json(v["phi"]);
    if (v.contains("feature_noise")) dm.heterogeneity[tag] = matrix_from_json(v["feature_noise"]);
  }
  try {
    dm.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid data model: ") + e.what());
  }
  return dm;
}

Json solution_to_json(const ClosedFormSolution& sol) {
  Json j;
  j["format"] = "edln.solution";
  j["tag"] = sol.tag;
  j["rank"] = sol.rank();
  j["singular_values"] = std::vector<double>(sol.singular_values.data(),
                                             sol.singular_values.data() + sol.singular_values.size());
  j["layer_scales"] = sol.layer_scales;
  j["a_h"] = sol.a_h;
  j["a_g"] = sol.a_g;
  j["v_bar"] = matrix_to_json(sol.v_bar);
  j["network"] = network_to_json(sol.network);
  return j;
}

Json balance_report_to_json(const BalanceReport& report) {
  Json j;
  j["on_constraint"] = report.on_constraint;
  j["max_residual"] = report.max_residual();
  j["interfaces"] = Json::array();
  for (const auto& b : report.interfaces)
    j["interfaces"].push_back({{"interface", b.interface},
                               {"gradient_balance", b.gradient_balance},
                               {"layer_condition", b.layer_condition},
                               {"rowcol", b.rowcol}});
  return j;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

Json parse_file(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text_file(path));
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_network(const EdlnNetwork& net, const std::filesystem::path& path) {
  write_text_file(path, network_to_json(net).dump(1) + "\n");
}

EdlnNetwork load_network(const std::filesystem::path& path) {
  return network_from_json(parse_file(path));
}

void save_data_model(const DataModel& dm, const std::filesystem::path& path) {
  write_text_file(path, data_model_to_json(dm).dump(1) + "\n");
}

DataModel load_data_model(const std::filesystem::path& path) {
  return data_model_from_json(parse_file(path));
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

std::string batch_csv(const PairedBatch& batch) {
  std::ostringstream out;
  out << "sample";
  for (Eigen::Index k = 0; k < batch.x_base.rows(); ++k) out << ",x_" << k + 1;
  for (const auto& [tag, x] : batch.views) {
    for (Eigen::Index k = 0; k < x.rows(); ++k) out << ",x_" << tag << "_" << k + 1;
    for (Eigen::Index k = 0; k < batch.labels.at(tag).rows(); ++k)
      out << ",y_" << tag << "_" << k + 1;
  }
  out << "\n";
  for (Eigen::Index n = 0; n < batch.size(); ++n) {
    out << n;
    for (Eigen::Index k = 0; k < batch.x_base.rows(); ++k) out << "," << format_double(batch.x_base(k, n));
    for (const auto& [tag, x] : batch.views) {
      for (Eigen::Index k = 0; k < x.rows(); ++k) out << "," << format_double(x(k, n));
      const Matrix& y = batch.labels.at(tag);
      for (Eigen::Index k = 0; k < y.rows(); ++k) out << "," << format_double(y(k, n));
    }
    out << "\n";
  }
  return out.str();
}

std::string balance_csv(const BalanceReport& report) {
  std::ostringstream out;
  out << "interface,gradient_balance,layer_condition,rowcol\n";
  for (const auto& b : report.interfaces)
    out << b.interface << "," << format_double(b.gradient_balance) << ","
        << format_double(b.layer_condition) << "," << format_double(b.rowcol) << "\n";
  return out.str();
}

std::string alignment_csv(const Matrix& scores, const std::vector<int>& layers_a,
                          const std::vector<int>& layers_b) {
  if (scores.rows() != static_cast<Eigen::Index>(layers_a.size()) ||
      scores.cols() != static_cast<Eigen::Index>(layers_b.size()))
    throw ShapeError("alignment_csv: layer lists do not match the score matrix");
  std::ostringstream out;
  out << "layer_a";
  for (int b : layers_b) out << ",b_" << b;
  out << "\n";
  for (std::size_t r = 0; r < layers_a.size(); ++r) {
    out << layers_a[r];
    for (std::size_t c = 0; c < layers_b.size(); ++c)
      out << "," << format_double(scores(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    out << "\n";
  }
  return out.str();
}

}  // namespace edln
