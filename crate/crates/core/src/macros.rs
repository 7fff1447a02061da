/// A fieldless enum with stable names and numeric codes.
macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $text:literal = $code:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }

            pub fn parse(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " {:?}; expected one of {:?}"),
                        s,
                        [$($text),+]
                    ))),
                }
            }

            #[allow(dead_code)]
            pub(crate) fn code(self) -> u32 {
                match self {
                    $($name::$variant => $code),+
                }
            }

            #[allow(dead_code)]
            pub(crate) fn from_code(code: u32) -> Result<Self> {
                match code {
                    $($code => Ok($name::$variant),)+
                    _ => Err(Error::Malformed(format!(concat!("bad ", stringify!($name), " code {}"), code))),
                }
            }
        }
    };
}
