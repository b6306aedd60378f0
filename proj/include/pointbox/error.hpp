#pragma once

#include <stdexcept>
#include <string>

namespace pointbox {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define POINTBOX_ERROR(Name)                  \
    class Name : public Error {               \
    public:                                   \
        using Error::Error;                   \
    }

POINTBOX_ERROR(FewerThanTwoPoints);
POINTBOX_ERROR(SpecInfeasible);
POINTBOX_ERROR(IoError);
POINTBOX_ERROR(FormatError);
POINTBOX_ERROR(InsufficientData);
POINTBOX_ERROR(IndivisibleImage);
POINTBOX_ERROR(ShapeError);
POINTBOX_ERROR(DegenerateDataset);
POINTBOX_ERROR(TooFewImages);
POINTBOX_ERROR(ConfigError);
POINTBOX_ERROR(NumericError);

#undef POINTBOX_ERROR

} // namespace pointbox
