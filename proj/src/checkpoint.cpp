#include "esma/checkpoint.hpp"

#include <fstream>

#include "esma/errors.hpp"
#include "esma/textio.hpp"

namespace esma {

void save_model(std::ostream& os, const MlpClassifier& model) {
  os << "esma-mlp 1\n";
  os << "layers " << model.layers().size() << '\n';
  for (const auto& l : model.layers()) {
    os << "layer " << l.out_dim() << ' ' << l.in_dim() << ' '
       << (l.activation == Activation::relu ? "relu" : "identity") << '\n';
    write_values(os, l.weight.data);
    write_values(os, l.bias);
  }
}

MlpClassifier load_model(std::istream& is) {
  TokenReader r(is);
  r.expect("esma-mlp");
  if (r.count() != 1) throw FormatError("esma-mlp: unsupported version");
  r.expect("layers");
  const std::size_t n_layers = r.count();
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i < n_layers; ++i) {
    r.expect("layer");
    const std::size_t out = r.count();
    const std::size_t in = r.count();
    const std::string act = r.next();
    DenseLayer l;
    if (act == "relu") {
      l.activation = Activation::relu;
    } else if (act == "identity") {
      l.activation = Activation::identity;
    } else {
      throw FormatError("esma-mlp: unknown activation '" + act + "'");
    }
    l.weight = Tensor2(out, in, r.reals(out * in));
    l.bias = r.reals(out);
    layers.push_back(std::move(l));
  }
  return MlpClassifier(std::move(layers));
}

void save_model(const std::filesystem::path& path, const MlpClassifier& model) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  save_model(os, model);
}

MlpClassifier load_model(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot read " + path.string());
  return load_model(is);
}

}  // namespace esma
