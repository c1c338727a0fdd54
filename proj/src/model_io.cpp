#include "rareis/model_io.hpp"

#include <stdexcept>

namespace rareis {

namespace {

using nlohmann::json;

json vector_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Vector vector_from(const json& j, std::size_t d, const char* what) {
  if (!j.is_array() || j.size() != d) throw std::invalid_argument(std::string("model json: bad ") + what);
  Vector v(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < d; ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

Matrix matrix_from(const json& j, std::size_t rows, std::size_t cols, const char* what) {
  if (!j.is_array() || j.size() != rows) throw std::invalid_argument(std::string("model json: bad ") + what);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw std::invalid_argument(std::string("model json: bad ") + what);
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

json model_to_json(const MppcaModel& model) {
  json comps = json::array();
  for (const auto& c : model.components()) {
    comps.push_back({{"mu", vector_json(c.mu())}, {"W", matrix_json(c.w())}, {"sigma2", c.sigma2()}});
  }
  return {{"type", "mppca"},
          {"d", model.dim()},
          {"l", model.latent_dim()},
          {"weights", model.weights()},
          {"components", std::move(comps)}};
}

json model_to_json(const GmmModel& model) {
  json comps = json::array();
  for (const auto& c : model.components()) {
    comps.push_back({{"mu", vector_json(c.mu())}, {"cov", matrix_json(c.cov())}});
  }
  return {{"type", "gmm"}, {"d", model.dim()}, {"weights", model.weights()}, {"components", std::move(comps)}};
}

json model_to_json(const Proposal& model) {
  struct Visitor {
    json operator()(const StandardNormalPrior& p) const { return {{"type", "prior"}, {"d", p.dim()}}; }
    json operator()(const MppcaModel& m) const { return model_to_json(m); }
    json operator()(const GmmModel& m) const { return model_to_json(m); }
  };
  return std::visit(Visitor{}, model);
}

Proposal model_from_json(const json& doc) {
  const std::string type = doc.at("type").get<std::string>();
  const auto d = doc.at("d").get<std::size_t>();
  if (type == "prior") return StandardNormalPrior(d);

  const auto weights = doc.at("weights").get<std::vector<double>>();
  const json& comps = doc.at("components");
  if (type == "mppca") {
    const auto l = doc.at("l").get<std::size_t>();
    std::vector<MppcaComponent> out;
    for (const auto& c : comps) {
      out.emplace_back(vector_from(c.at("mu"), d, "mu"), matrix_from(c.at("W"), d, l, "W"),
                       c.at("sigma2").get<double>());
    }
    return MppcaModel(weights, std::move(out));
  }
  if (type == "gmm") {
    std::vector<GmmComponent> out;
    for (const auto& c : comps) out.emplace_back(vector_from(c.at("mu"), d, "mu"), matrix_from(c.at("cov"), d, d, "cov"));
    return GmmModel(weights, std::move(out));
  }
  throw std::invalid_argument("model json: unknown type '" + type + "'");
}

std::string dump_model(const Proposal& model) { return model_to_json(model).dump(); }

Proposal parse_model(const std::string& text) { return model_from_json(json::parse(text)); }

}  // namespace rareis
